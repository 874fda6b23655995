"""Where the robust negative loss stops pushing a pair apart."""

import numpy as np

from ptmatch import rncl

# per negative pair: l(S) = -(1-S)^(1/alpha) log(1-S)
S = np.linspace(0.0, 0.99, 12)
for alpha in (0.5, 1.0, 2.0, 4.0):
    rep = rncl.find_threshold(alpha)
    print(f"alpha={alpha:<4g} S*={rep.s_star:.6f}  closed forms {rep.candidates}  -> {rep.matched}")

# below S* the slope is positive (minimizing lowers the similarity); above it, negative
loss, grad = rncl.rnc_pair_loss(S, 1.0), rncl.rnc_pair_grad(S, 1.0)
for s, l, g in zip(S, loss, grad):
    print(f"S={s:.2f}  loss={l:.4f}  slope={g:+.4f}")

# a batch of four pairs, scored three ways
rng = np.random.default_rng(0)
P = rng.normal(size=(4, 8))
T = P + 0.5 * rng.normal(size=(4, 8))
P /= np.linalg.norm(P, axis=1, keepdims=True)
T /= np.linalg.norm(T, axis=1, keepdims=True)
S_pt, S_tp = rncl.similarity_pair(P, T, tau=0.1)
y = np.eye(4)
print("contrastive  ", float(rncl.contrastive_loss(S_pt, S_tp, y).value))
print("complementary", float(rncl.complementary_loss(S_pt, S_tp, y).value))
print("robust a=2   ", float(rncl.rnc_loss(S_pt, S_tp, y, 2.0).value))
