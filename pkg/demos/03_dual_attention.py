"""Pooling a bag of tokens into one unit vector with token and feature attention."""

import itertools

import numpy as np

from ptmatch import dap
from ptmatch.dap import DapConfig, DapParams, TokenFeatures

rng = np.random.default_rng(1)
params = DapParams.init(d_f_p=16, d_f_t=16, d_c=8, rng=rng)
cfg = DapConfig(d_c=8)

scene = TokenFeatures(rng.normal(size=(6, 16)), "pointcloud", rng.uniform(size=(6, 2)))
text = TokenFeatures(rng.normal(size=(4, 16)), "text")
p, t = dap.embed(scene, params, cfg), dap.embed(text, params, cfg)
print("embedding norms:", np.linalg.norm(p), np.linalg.norm(t))
print("cosine similarity:", float(p @ t))

# the stages one at a time
a_tok, a_feat, V = dap.attention_maps(scene.Z, "pointcloud", params.constants(), cfg, scene.centroids)
print("token weights:", np.round(a_tok.value[:, 0], 3), "sum", a_tok.value.sum())
print("feature attention columns sum to", np.round(a_feat.value.sum(axis=0), 12))

# reordering patches together with their centroids changes nothing
worst = 0.0
for perm in itertools.permutations(range(4)):
    perm = list(perm)
    sub = TokenFeatures(scene.Z[:4][perm], "pointcloud", scene.centroids[:4][perm])
    ref = dap.embed(TokenFeatures(scene.Z[:4], "pointcloud", scene.centroids[:4]), params, cfg)
    worst = max(worst, np.abs(dap.embed(sub, params, cfg) - ref).max())
print("max change over all 24 orderings:", worst)

# ablations switch a stage off
for flags in ({"use_token_attention": False}, {"use_feature_attention": False}, {"use_position_embedding": False}):
    e = dap.embed(scene, params, DapConfig(d_c=8, **flags))
    print(flags, "moves the embedding by", round(float(np.linalg.norm(e - p)), 4))
