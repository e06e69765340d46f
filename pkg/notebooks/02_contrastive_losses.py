# %% [markdown]
# # Patchwise contrastive losses
#
# Three losses over the same similarities: InfoNCE keeps the positive in
# its denominator, DCE drops it, and hDCE reweights negatives by a von
# Mises-Fisher factor so that negatives close to the positive count more.

# %%
import numpy as np

from semst import ContrastiveBatch, Tensor, dce, hdce, info_nce, vmf_weights


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


rng = np.random.default_rng(0)
n, k, d = 6, 6, 16
q = unit(rng.normal(size=(n, d)))
p = unit(q + 0.3 * rng.normal(size=(n, d)))
negs = unit(rng.normal(size=(n, k, d)))

for beta in (0.0, 0.5, 2.0):
    b = ContrastiveBatch(q, p, negs, tau=0.1, beta=beta)
    print(f"beta={beta}: infonce {float(info_nce(b).data):.4f}  dce {float(dce(b).data):.4f}  "
          f"hdce {float(hdce(b).data):.4f}")

# %% [markdown]
# vmf_weights returns a distribution over the K negatives. hDCE multiplies
# it by N, so with beta = 0 every negative gets weight N/K and hDCE is DCE
# shifted by log N (N = K here).

# %%
b = ContrastiveBatch(q, p, negs, tau=0.1, beta=0.0)
print(float(hdce(b).data) - float(dce(b).data), np.log(k))
print(vmf_weights(p[0], negs[0], 0.0).data)
print(vmf_weights(p[0], negs[0], 2.0).data.round(3))

# %% [markdown]
# ## Negative-positive coupling
#
# Put one negative almost on top of the positive. InfoNCE's gradient
# toward that negative is damped by the positive term in its
# denominator; DCE's is not.

# %%
hard = unit(p[0] + 0.05 * rng.normal(size=d))
probe = negs.copy()
probe[0, 0] = hard
for name, fn in (("infonce", info_nce), ("dce", dce)):
    t = Tensor(probe, requires_grad=True)
    fn(ContrastiveBatch(q, p, t, tau=0.07)).backward()
    print(name, np.linalg.norm(t.grad[0, 0]))
