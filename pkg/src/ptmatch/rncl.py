"""Batch similarities, contrastive / complementary / robust negative losses,
and analysis of where the per-pair robust loss changes slope.

Loss functions accept :class:`~ptmatch.diffkernel.Tensor` or array inputs
and return a scalar Tensor, so they compose with the embedding graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from . import diffkernel as dk
from .errors import AnalysisError, ConfigurationError, DimensionError, DomainError, LabelError

LOSS_KINDS = ("contrastive", "complementary", "rnc")
S_MAX = 1.0 - 1e-12


@dataclass(frozen=True)
class LossConfig:
    kind: str = "rnc"
    alpha: float = 2.0
    tau: float = 0.05

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be > 0, got {self.alpha}")
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")


def softmax_similarity(P, T, tau: float, direction: str = "p2t"):
    """Row-softmax of scaled dot products between two embedding batches.

    ``direction="p2t"`` gives rows indexed by point clouds (``P`` rows),
    ``"t2p"`` rows indexed by texts.
    """
    if not tau > 0:
        raise ConfigurationError(f"temperature must be > 0, got {tau}")
    P, T = dk.as_tensor(P), dk.as_tensor(T)
    if P.shape != T.shape or P.value.ndim != 2:
        raise DimensionError(f"embedding batches must have equal (K, d_c) shapes, got {P.shape} and {T.shape}")
    if direction == "p2t":
        logits = dk.matmul(P, dk.transpose(T))
    elif direction == "t2p":
        logits = dk.matmul(T, dk.transpose(P))
    else:
        raise ConfigurationError(f"direction must be 'p2t' or 't2p', got {direction!r}")
    return dk.softmax(dk.scale(logits, 1.0 / tau), axis=-1)


def similarity_pair(P, T, tau: float):
    """Both similarity directions built from one shared logit matrix."""
    if not tau > 0:
        raise ConfigurationError(f"temperature must be > 0, got {tau}")
    P, T = dk.as_tensor(P), dk.as_tensor(T)
    if P.shape != T.shape or P.value.ndim != 2:
        raise DimensionError(f"embedding batches must have equal (K, d_c) shapes, got {P.shape} and {T.shape}")
    logits = dk.scale(dk.matmul(P, dk.transpose(T)), 1.0 / tau)
    return dk.softmax(logits, axis=-1), dk.softmax(dk.transpose(logits), axis=-1)


def _labels(y, K):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (K, K):
        raise DimensionError(f"labels shape {y.shape} does not match a batch of {K}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise LabelError("labels must be binary")
    return y


def _pair(S_pt, S_tp, y):
    S_pt, S_tp = dk.as_tensor(S_pt), dk.as_tensor(S_tp)
    if S_pt.shape != S_tp.shape or S_pt.value.ndim != 2 or S_pt.shape[0] != S_pt.shape[1]:
        raise DimensionError(f"similarity matrices must be equal square shapes, got {S_pt.shape} and {S_tp.shape}")
    K = S_pt.shape[0]
    return S_pt, S_tp, _labels(y, K), K


def contrastive_loss(S_pt, S_tp, y):
    """Symmetric cross-entropy on the positive pair of each row."""
    S_pt, S_tp, y, K = _pair(S_pt, S_tp, y)
    for name, lab in (("row", y), ("column", y.T)):
        counts = lab.sum(axis=1)
        if np.any(counts != 1):
            i = int(np.argmax(counts != 1))
            raise LabelError(f"{name} {i} has {int(counts[i])} positives; contrastive loss needs exactly one")
    total = dk.add(dk.sum(dk.hadamard(y, dk.log(S_pt))), dk.sum(dk.hadamard(y.T, dk.log(S_tp))))
    return dk.scale(total, -1.0 / K)


def _negative_term(S, mask, alpha):
    S = dk.clamp_max(S, S_MAX)
    logs = dk.log1m(S)
    if alpha is not None:
        logs = dk.hadamard(dk.pow(dk.subtract(1.0, S), 1.0 / alpha), logs)
    return dk.sum(dk.hadamard(mask, logs))


def complementary_loss(S_pt, S_tp, y):
    """``-(1/K) sum (1 - y) log(1 - S)`` over both directions."""
    S_pt, S_tp, y, K = _pair(S_pt, S_tp, y)
    total = dk.add(_negative_term(S_pt, 1.0 - y, None), _negative_term(S_tp, 1.0 - y.T, None))
    return dk.scale(total, -1.0 / K)


def rnc_loss(S_pt, S_tp, y, alpha: float):
    """Complementary loss with each negative term weighted by ``(1 - S)^(1/alpha)``."""
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    S_pt, S_tp, y, K = _pair(S_pt, S_tp, y)
    total = dk.add(_negative_term(S_pt, 1.0 - y, alpha), _negative_term(S_tp, 1.0 - y.T, alpha))
    return dk.scale(total, -1.0 / K)


def batch_loss(S_pt, S_tp, y, config: LossConfig):
    if config.kind == "contrastive":
        return contrastive_loss(S_pt, S_tp, y)
    if config.kind == "complementary":
        return complementary_loss(S_pt, S_tp, y)
    return rnc_loss(S_pt, S_tp, y, config.alpha)


# -- per-pair analysis ------------------------------------------------------


def rnc_pair_loss(S, alpha: float):
    """``-(1 - S)^(1/alpha) log(1 - S)``, vectorized over ``S``."""
    S = np.asarray(S, dtype=np.float64)
    u = 1.0 - S
    return -np.power(u, 1.0 / alpha) * np.log1p(-S)


def rnc_pair_grad(S, alpha: float):
    """d/dS of :func:`rnc_pair_loss`: ``(1/alpha) (1 - S)^((1 - alpha)/alpha) (log(1 - S) + alpha)``."""
    S = np.asarray(S, dtype=np.float64)
    u = 1.0 - S
    return np.power(u, (1.0 - alpha) / alpha) * (np.log1p(-S) + alpha) / alpha


def rnc_per_pair(S: float, alpha: float) -> tuple[float, float]:
    """Loss and its derivative for a single negative pair similarity."""
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    if not 0.0 <= S < 1.0:
        raise DomainError(f"similarity must lie in [0, 1), got {S!r}")
    return float(rnc_pair_loss(S, alpha)), float(rnc_pair_grad(S, alpha))


def _fd_pair_grad(S, alpha, h):
    step = min(h, 0.5 * (1.0 - S), 0.5 * S) if S > 0 else h
    return (rnc_pair_loss(S + step, alpha) - rnc_pair_loss(S - step, alpha)) / (2.0 * step)


@dataclass(frozen=True)
class ThresholdReport:
    """Where the per-pair robust loss switches from pushing apart to pulling together."""

    alpha: float
    s_star: float
    candidates: dict
    matched: str | None
    max_loss: float


def find_threshold(alpha: float, tol: float = 1e-10, h: float = 1e-6) -> ThresholdReport:
    """Bisect the sign change of the finite-difference slope of the per-pair loss.

    The slope is positive for small similarities (minimizing pushes a
    negative pair apart) and negative above the threshold. The report
    compares the bisected point with the closed forms ``1 - exp(-alpha)``
    and ``1 - exp(1 - alpha)`` and names the one it matches within 1e-6.
    """
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    if not tol > 0:
        raise ConfigurationError(f"tol must be > 0, got {tol}")

    def slope(s):
        return float(_fd_pair_grad(s, alpha, h))

    # grid dense near 1 so large alpha still brackets
    grid = np.unique(np.concatenate([np.linspace(1e-4, 0.99, 200), 1.0 - np.logspace(-2, -12, 60)]))
    signs = np.sign([slope(s) for s in grid])
    changes = np.flatnonzero(signs[:-1] * signs[1:] < 0)
    if changes.size == 0:
        raise AnalysisError(f"no slope sign change found on (0, 1) for alpha={alpha}")
    k = changes[0]
    s_star = bisect(slope, grid[k], grid[k + 1], xtol=tol, rtol=4 * np.finfo(float).eps)
    candidates = {
        "1-exp(-alpha)": 1.0 - math.exp(-alpha),
        "1-exp(1-alpha)": 1.0 - math.exp(1.0 - alpha),
    }
    matched = None
    for name, value in candidates.items():
        if abs(value - s_star) <= 1e-6:
            matched = name
            break
    return ThresholdReport(alpha, float(s_star), candidates, matched, float(rnc_pair_loss(s_star, alpha)))


def count_sign_changes(values) -> int:
    s = np.sign(np.asarray(values, dtype=np.float64))
    s = s[s != 0]
    return int(np.count_nonzero(s[:-1] != s[1:]))
