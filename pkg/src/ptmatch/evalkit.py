"""Bidirectional Recall@K evaluation, ranking and attention inspection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dap
from .dap import DapConfig, DapParams, TokenFeatures
from .errors import UsageError

DEFAULT_KS = (1, 5, 10)


@dataclass(frozen=True)
class RetrievalMetrics:
    """Recall percentages keyed by K for both retrieval directions."""

    p2t: dict
    t2p: dict

    @property
    def rsum(self) -> float:
        return sum(self.p2t.values()) + sum(self.t2p.values())

    def to_dict(self, config_digest: str | None = None) -> dict:
        out = {
            "format_version": 1,
            "p2t": {f"r{k}": v for k, v in self.p2t.items()},
            "t2p": {f"r{k}": v for k, v in self.t2p.items()},
            "rsum": self.rsum,
        }
        out["config_digest"] = config_digest
        return out

    def summary(self) -> str:
        def fmt(d):
            return "/".join(f"{v:.1f}" for v in d.values())

        return f"p2t r1/r5/r10 {fmt(self.p2t)}  t2p r1/r5/r10 {fmt(self.t2p)}  rsum {self.rsum:.1f}"


def encode_corpus(ds, params: DapParams, config: DapConfig | None = None):
    """Embed every scene and every text of a dataset once."""
    scenes = dap.embed_many([s.features for s in ds.scenes], params, config)
    texts = dap.embed_many([t.features for t in ds.texts], params, config)
    return scenes, texts


def _ranks(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """0-based rank of ``targets[i]`` in row ``i``; ties go to the lower index."""
    rows = np.arange(scores.shape[0])
    tgt = scores[rows, targets][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    better = (scores > tgt) | ((scores == tgt) & (cols < targets[:, None]))
    return better.sum(axis=1)


def recall_at_k(scene_embs, text_embs, text_to_scene, ks=DEFAULT_KS) -> RetrievalMetrics:
    """Recall@K in percent for both directions.

    Args:
        scene_embs: ``(N_p, d)`` unit vectors.
        text_embs: ``(N_t, d)`` unit vectors.
        text_to_scene: Ground-truth scene index for every text.
        ks: Cutoffs.

    A text query hits at K when its scene ranks within the top K. A scene
    query hits at K when any of its texts does; scenes with no text are
    skipped as queries but stay in the text-query corpus.
    """
    P = np.asarray(scene_embs, dtype=np.float64)
    T = np.asarray(text_embs, dtype=np.float64)
    gt = np.asarray(text_to_scene, dtype=np.int64)
    if P.shape[0] == 0 or T.shape[0] == 0:
        raise UsageError("cannot evaluate an empty corpus")
    if gt.shape != (T.shape[0],):
        raise UsageError(f"need one ground-truth scene per text, got {gt.shape} for {T.shape[0]} texts")
    if gt.min() < 0 or gt.max() >= P.shape[0]:
        raise UsageError("ground-truth scene index out of range")
    has_text = np.bincount(gt, minlength=P.shape[0]) > 0

    sims = T @ P.T
    t_rank = _ranks(sims, gt)
    # scene query: best-ranked of its texts in the scene's row
    sT = sims.T
    best = np.full(P.shape[0], np.iinfo(np.int64).max)
    t_idx = np.arange(T.shape[0])
    for j in np.flatnonzero(has_text):
        mine = t_idx[gt == j]
        r = _ranks(np.repeat(sT[j:j + 1], mine.size, axis=0), mine)
        best[j] = r.min()
    t2p = {k: 100.0 * float(np.mean(t_rank < k)) for k in ks}
    # scenes without a ground-truth text cannot be scored as queries
    p2t = {k: 100.0 * float(np.mean(best[has_text] < k)) for k in ks}
    return RetrievalMetrics(p2t=p2t, t2p=t2p)


def evaluate(ds, params: DapParams, config: DapConfig | None = None, ks=DEFAULT_KS) -> RetrievalMetrics:
    """Recall@K against the clean ground truth, ignoring any injected noise."""
    P, T = encode_corpus(ds, params, config)
    gt = [ds.scene_index(ds.clean_map[t.id]) for t in ds.texts]
    return recall_at_k(P, T, gt, ks)


def rank_query(query, corpus, ids=None) -> list:
    """Corpus ids by descending dot product with ``query``, ties by ascending id."""
    C = np.asarray(corpus, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] == 0:
        raise UsageError("cannot rank against an empty corpus")
    ids = list(range(C.shape[0])) if ids is None else list(ids)
    scores = C @ np.asarray(query, dtype=np.float64)
    if len(ids) != C.shape[0]:
        raise UsageError(f"{len(ids)} ids for {C.shape[0]} corpus items")
    order = sorted(range(C.shape[0]), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order]


def attention_dump(sample: TokenFeatures, params: DapParams, config: DapConfig | None = None,
                   sample_id: str | None = None) -> dict:
    """Token-level weights and per-token mean dual attention of one sample."""
    config = config or DapConfig(d_c=params.d_c)
    a_tok, a_feat, _ = dap.attention_maps(sample.Z, sample.modality, params.constants(), config, sample.centroids)
    dual = (a_tok.value * a_feat.value).mean(axis=-1)
    return {
        "format_version": 1,
        "id": sample_id,
        "modality": sample.modality,
        "token_weights": a_tok.value[:, 0].tolist(),
        "dual_weights": dual.tolist(),
    }
