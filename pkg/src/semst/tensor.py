"""Dense float64 tensors with graph-based reverse-mode differentiation.

Every op builds a node holding its parents and a closure that maps the
output gradient to parent gradients. ``Tensor.backward`` walks the graph in
reverse topological order from a scalar root.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericalError(ArithmeticError):
    """A factorization or solve failed."""


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"incompatible shapes {a} and {b}") from None


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            arr = data.view()
        else:
            arr = np.array(data, dtype=np.float64)
        # a read-only view keeps ops from mutating shared buffers
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if not track:
            return Tensor(data)
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)

    @classmethod
    def zeros(cls, *shape, requires_grad=False):
        return cls(np.zeros(shape), requires_grad=requires_grad)

    @classmethod
    def ones(cls, *shape, requires_grad=False):
        return cls(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backward -----------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf.

        ``self`` must be a scalar unless an explicit seed gradient is given.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar root")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64).reshape(self.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- elementwise binary -------------------------------------------------
    def _binary(self, other, op: str) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, other.data
        _broadcast_shape(a.shape, b.shape)
        sa, sb = a.shape, b.shape
        if op == "add":
            out = a + b
            bw = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        elif op == "sub":
            out = a - b
            bw = lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
        elif op == "mul":
            out = a * b
            bw = lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb))
        elif op == "div":
            out = a / b
            bw = lambda g: (_unbroadcast(g / b, sa), _unbroadcast(-g * a / (b * b), sb))
        else:
            raise ValueError(f"unknown binary op {op!r}")
        return Tensor._make(out, (self, other), bw)

    def __add__(self, o):
        return self._binary(o, "add")

    def __radd__(self, o):
        return Tensor(o)._binary(self, "add")

    def __sub__(self, o):
        return self._binary(o, "sub")

    def __rsub__(self, o):
        return Tensor(o)._binary(self, "sub")

    def __mul__(self, o):
        return self._binary(o, "mul")

    def __rmul__(self, o):
        return Tensor(o)._binary(self, "mul")

    def __truediv__(self, o):
        return self._binary(o, "div")

    def __rtruediv__(self, o):
        return Tensor(o)._binary(self, "div")

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p: float):
        x = self.data
        return Tensor._make(x**p, (self,), lambda g: (g * p * x ** (p - 1),))

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        x = self.data
        out = x[idx]

        def bw(g):
            full = np.zeros_like(x)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(np.array(out), (self,), bw)

    # -- shape ops ----------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- reductions ---------------------------------------------------------
    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return reduce(self, "mean", axis, keepdims)

    def max(self, axis=None, keepdims=False) -> "Tensor":
        return reduce(self, "max", axis, keepdims)

    # -- elementwise unary shortcuts ----------------------------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def elementwise_binary(a, b, op: str) -> Tensor:
    return _t(a)._binary(b, op)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules (rank >= 2 on both sides)."""
    a, b = _t(a), _t(b)
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands; reshape vectors explicitly")
    if A.shape[-1] != B.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {A.shape} @ {B.shape}")
    _broadcast_shape(A.shape[:-2], B.shape[:-2])
    out = A @ B

    def bw(g):
        ga = g @ np.swapaxes(B, -1, -2)
        gb = np.swapaxes(A, -1, -2) @ g
        return _unbroadcast(ga, A.shape), _unbroadcast(gb, B.shape)

    return Tensor._make(out, (a, b), bw)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(out)


def reduce(x: Tensor, op: str, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    X = x.data
    axes = _norm_axis(axis, X.ndim)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(X.shape))
    if op == "sum":
        out = X.sum(axis=axes, keepdims=keepdims)
        bw = lambda g: (np.broadcast_to(g.reshape(kept_shape), X.shape).copy(),)
    elif op == "mean":
        count = int(np.prod([X.shape[i] for i in axes])) if axes else 1
        out = X.mean(axis=axes, keepdims=keepdims)
        bw = lambda g: (np.broadcast_to(g.reshape(kept_shape) / count, X.shape).copy(),)
    elif op == "max":
        out = X.max(axis=axes, keepdims=keepdims)
        hit = X == X.max(axis=axes, keepdims=True)
        share = hit / hit.sum(axis=axes, keepdims=True)
        bw = lambda g: (share * g.reshape(kept_shape),)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return Tensor._make(np.asarray(out), (x,), bw)


# -- elementwise unary ------------------------------------------------------

def exp(x) -> Tensor:
    x = _t(x)
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _t(x)
    X = x.data
    return Tensor._make(np.log(X), (x,), lambda g: (g / X,))


def sqrt(x) -> Tensor:
    x = _t(x)
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (g * 0.5 / out,))


def tanh(x) -> Tensor:
    x = _t(x)
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = _t(x)
    X = x.data
    out = np.where(X >= 0, 1.0 / (1.0 + np.exp(-np.abs(X))), np.exp(-np.abs(X)) / (1.0 + np.exp(-np.abs(X))))
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = _t(x)
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _t(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return Tensor._make(x.data * scale, (x,), lambda g: (g * scale,))


def logsumexp(x, axis=-1, keepdims=False) -> Tensor:
    x = _t(x)
    X = x.data
    m = X.max(axis=axis, keepdims=True)
    e = np.exp(X - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s

    def bw(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (g * soft,)

    return Tensor._make(out if keepdims else np.squeeze(out, axis=axis), (x,), bw)


def softmax(x, axis=-1) -> Tensor:
    x = _t(x)
    X = x.data
    e = np.exp(X - X.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), bw)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_t(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, tuple(ts), bw)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_t(t) for t in tensors]
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts], axis=axis)


def where(cond, a, b) -> Tensor:
    a, b = _t(a), _t(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    return Tensor._make(
        out,
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(np.where(cond, 0.0, g), b.shape)),
    )


def normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale rows to unit Euclidean norm along ``axis``."""
    x = _t(x)
    return x / sqrt((x * x).sum(axis=axis, keepdims=True) + eps)


def pad2d(x, pad) -> Tensor:
    """Zero-pad the last two axes; ``pad`` is an int or (top, bottom, left, right)."""
    x = _t(x)
    top, bottom, left, right = (pad,) * 4 if isinstance(pad, int) else tuple(pad)
    if min(top, bottom, left, right) < 0:
        raise ValueError("pad must be non-negative")
    if top == bottom == left == right == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(x.data, width)
    H, W = out.shape[-2:]
    return Tensor._make(out, (x,), lambda g: (g[..., top:H - bottom, left:W - right],))


# -- linear algebra ---------------------------------------------------------

def solve_spd(A, b) -> Tensor:
    """Solve ``A x = b`` for symmetric positive definite ``A`` via Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides. The backward pass
    returns ``dA = -(A^{-1} g) x^T`` and ``db = A^{-1} g``.
    """
    A, b = _t(A), _t(b)
    M, rhs = A.data, b.data
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"solve_spd needs a square matrix, got {M.shape}")
    if rhs.shape[0] != M.shape[0]:
        raise ShapeError(f"right-hand side {rhs.shape} does not match {M.shape}")
    try:
        factor = linalg.cho_factor(M, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(M) if np.all(np.isfinite(M)) else np.inf
        raise NumericalError(f"Cholesky factorization failed (condition number {cond:.3e}): {exc}") from None
    x = linalg.cho_solve(factor, rhs)

    def bw(g):
        gb = linalg.cho_solve(factor, g)
        ga = -np.outer(gb, x) if x.ndim == 1 else -gb @ x.T
        return ga, gb

    return Tensor._make(x, (A, b), bw)


# -- images -----------------------------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input with OIHW weights."""
    x, weight = _t(x), _t(weight)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIHW weight")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ShapeError(f"input has {C} channels, weight expects {Cw}")
    Xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    Hp, Wp = Xp.shape[2:]
    if Hp < kh or Wp < kw:
        raise ShapeError("kernel larger than padded input")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    win = sliding_window_view(Xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    Wm = weight.data.reshape(O, -1)
    out = (cols @ Wm.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    parents = (x, weight)
    if bias is not None:
        bias = _t(bias)
        out = out + bias.data.reshape(1, O, 1, 1)
        parents = (x, weight, bias)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gm.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (gm @ Wm).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros((B, C, Hp, Wp))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:Hp - pad, pad:Wp - pad] if pad else gxp
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return Tensor._make(out, parents, bw)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation weights, shape (n_out, n_in)."""
    R = np.zeros((n_out, n_in))
    if n_in == 1:
        R[:, 0] = 1.0
        return R
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    rows = np.arange(n_out)
    np.add.at(R, (rows, lo), 1.0 - frac)
    np.add.at(R, (rows, hi), frac)
    return R


def resize_bilinear(x, h: int, w: int) -> Tensor:
    """Bilinear resize of the last two axes to ``(h, w)``."""
    x = _t(x)
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {(h, w)}")
    if x.ndim < 2:
        raise ShapeError("resize_bilinear needs rank >= 2")
    H, W = x.shape[-2:]
    if (H, W) == (h, w):
        return x
    Rh = _interp_matrix(H, h)
    Rw = _interp_matrix(W, w)
    out = Rh @ x.data @ Rw.T
    return Tensor._make(out, (x,), lambda g: (Rh.T @ g @ Rw,))


def upsample_nearest(x, factor: int) -> Tensor:
    x = _t(x)
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def bw(g):
        s = g.shape
        g = g.reshape(s[:-2] + (s[-2] // factor, factor, s[-1] // factor, factor))
        return (g.sum(axis=(-3, -1)),)

    return Tensor._make(out, (x,), bw)
