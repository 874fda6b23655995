"""Sinusoidal codes for 2-D patch centroids."""

import numpy as np

from ptmatch import posenc

# the origin: sin 0 = 0 and cos 0 = 1 on both axes, summed
print(posenc.patch_position_embedding(np.zeros((1, 2)), d_c=4))

# neighbouring patches get similar codes, distant ones less so
side = 5
g = np.stack(np.meshgrid(np.arange(side), np.arange(side), indexing="ij"), -1).reshape(-1, 2) / (side - 1)
E = posenc.patch_position_embedding(g, d_c=32)
E /= np.linalg.norm(E, axis=1, keepdims=True)
print("cosine(corner, next cell):", round(float(E[0] @ E[1]), 3))
print("cosine(corner, far corner):", round(float(E[0] @ E[-1]), 3))

# summing the two axes cannot tell (h, v) from (v, h); concatenation can
a, b = np.array([[0.2, 0.7]]), np.array([[0.7, 0.2]])
for fusion in ("sum", "concat"):
    d = np.abs(posenc.patch_position_embedding(a, d_c=32, fusion=fusion) - posenc.patch_position_embedding(b, d_c=32, fusion=fusion)).max()
    print(f"{fusion:6s} fusion, swapped coordinates differ by {d:.3g}")
