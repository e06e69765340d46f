# %% [markdown]
# # Crops, stitching and scale fusion
#
# Training sees a resized global crop and a full-resolution local crop.
# Inference tiles the image with overlapping local crops, averages the
# overlaps, and blends with the global prediction through a scale map.

# %%
import numpy as np

from semst import CoverageError, CropSpec, ScaleMap, fuse, plan_crops, stitch
from semst.multiscale import coverage_map

rng = np.random.default_rng(0)
print(plan_crops(64, 64, (40, 40), rng=rng, mode="global"))
print(plan_crops(64, 64, (32, 32), rng=rng, mode="local"))

# %% [markdown]
# Tiles snap to the far edges, so strides that do not divide the image
# still cover every pixel. The coverage map counts how many tiles touch
# each pixel.

# %%
plan = plan_crops(37, 29, (16, 16), (10, 10), mode="tiling")
print(len(plan), "tiles")
cov = coverage_map(plan, 37, 29)
print(cov.min(), cov.max())
print(cov[:12, :12])

# %% [markdown]
# Stitching a tiled image back from its own crops is exact.

# %%
img = rng.normal(size=(3, 37, 29))
back = stitch([(s, img[:, s.top:s.bottom, s.left:s.right]) for s in plan], 37, 29)
print(np.abs(back.data - img).max())

# %% [markdown]
# A plan with a hole is refused rather than silently averaged over zero.

# %%
gapped = [CropSpec(0, 16, 0, 16, 16, 16), CropSpec(0, 16, 20, 36, 16, 16)]
try:
    stitch([(s, np.zeros((3, 16, 16))) for s in gapped], 16, 36)
except CoverageError as exc:
    print("CoverageError:", exc)

# %% [markdown]
# Fusion is a per-pixel convex blend.

# %%
loc, glo = np.ones((3, 4, 4)), np.zeros((3, 4, 4))
mask = np.linspace(0, 1, 16).reshape(4, 4)
print(fuse(loc, glo, ScaleMap(mask)).data[0].round(2))
