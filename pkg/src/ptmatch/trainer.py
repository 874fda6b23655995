"""Deterministic mini-batch training of the dual attention parameters."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dap, diffkernel as dk, evalkit, rncl
from .dap import DapConfig, DapParams
from .errors import ConfigurationError, DegenerateInputError, DomainError, TrainingDivergenceError
from .rncl import LossConfig


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "rnc"
    alpha: float = 4.0
    tau: float = 0.1
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    d_c: int = 32
    feature_softmax_axis: str = "token"
    use_token_attention: bool = True
    use_feature_attention: bool = True
    use_position_embedding: bool = True
    validate_every_epoch: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2 for in-batch negatives, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        self.loss_config()
        self.dap_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(self.loss, self.alpha, self.tau)

    def dap_config(self) -> DapConfig:
        return DapConfig(
            d_c=self.d_c,
            feature_softmax_axis=self.feature_softmax_axis,
            use_token_attention=self.use_token_attention,
            use_feature_attention=self.use_feature_attention,
            use_position_embedding=self.use_position_embedding,
        )

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adaptive-moment updates with bias correction; state starts at zero."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict, grads: dict) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for name in sorted(arrays):
            g = grads[name]
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            out[name] = arrays[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


class SGD:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, arrays: dict, grads: dict) -> dict:
        return {name: arrays[name] - self.lr * grads[name] for name in sorted(arrays)}


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate)
    return SGD(config.learning_rate)


@dataclass
class Batch:
    """K positive pairs; labels are the identity (in-batch negatives)."""

    scene_Z: np.ndarray
    scene_centroids: np.ndarray
    text_Z: np.ndarray
    y: np.ndarray
    text_index: np.ndarray = None
    scene_index: np.ndarray = None


class PairTable:
    """Stacked token arrays of a dataset and its (text, assigned scene) pairs."""

    def __init__(self, ds):
        if not ds.texts:
            raise ConfigurationError("dataset has no texts")
        self.scene_Z = np.stack([s.features.Z for s in ds.scenes])
        self.scene_centroids = np.stack([s.features.centroids for s in ds.scenes])
        self.text_Z = np.stack([t.features.Z for t in ds.texts])
        self.pair_scene = np.array([ds.scene_index(t.scene_id) for t in ds.texts])

    def __len__(self):
        return len(self.pair_scene)

    def batch(self, text_idx, y=None) -> Batch:
        text_idx = np.asarray(text_idx)
        s = self.pair_scene[text_idx]
        K = len(text_idx)
        return Batch(self.scene_Z[s], self.scene_centroids[s], self.text_Z[text_idx],
                     np.eye(K) if y is None else y, text_idx, s)


def make_batches(n_pairs: int, K: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled pair-index batches of size K; the short tail is dropped."""
    if n_pairs < K:
        raise ConfigurationError(f"{n_pairs} pairs cannot fill one batch of {K}")
    order = np.random.default_rng([seed, epoch]).permutation(n_pairs)
    n_full = n_pairs // K
    return [order[i * K:(i + 1) * K] for i in range(n_full)]


def batch_objective(leaves: dict, batch: Batch, config: TrainConfig):
    """Scalar loss Tensor of one batch for the given parameter tensors."""
    dcfg = config.dap_config()
    P = dap.embed_tensor(batch.scene_Z, "pointcloud", leaves, dcfg, batch.scene_centroids)
    T = dap.embed_tensor(batch.text_Z, "text", leaves, dcfg)
    S_pt, S_tp = rncl.similarity_pair(P, T, config.tau)
    return rncl.batch_loss(S_pt, S_tp, batch.y, config.loss_config())


def train_step(batch: Batch, params: DapParams, config: TrainConfig, optimizer=None, epoch=None, step=None):
    """One forward/backward/update; returns the pre-update loss and new parameters."""
    optimizer = optimizer or make_optimizer(config)
    try:
        leaves = params.leaves()
        loss = batch_objective(leaves, batch, config)
    except (DomainError, DegenerateInputError) as exc:
        raise TrainingDivergenceError(f"numeric breakdown at epoch {epoch} step {step}: {exc}", epoch, step) from exc
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingDivergenceError(f"non-finite loss at epoch {epoch} step {step}", epoch, step)
    names = params.names()
    grads = dict(zip(names, dk.backward(loss, [leaves[n] for n in names])))
    for n, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {n} at epoch {epoch} step {step}", epoch, step)
    return value, DapParams(optimizer.step(params.arrays, grads))


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_r1_p2t: float | None
    val_r1_t2p: float | None
    wall_time: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def as_dicts(self, include_time: bool = False) -> list[dict]:
        rows = []
        for r in self.records:
            d = asdict(r)
            if not include_time:
                d.pop("wall_time")
            rows.append(d)
        return rows


def init_params(d_f_p: int, d_f_t: int, config: TrainConfig) -> DapParams:
    return DapParams.init(d_f_p, d_f_t, config.d_c, np.random.default_rng([config.seed, 7919]))


def train(ds_train, ds_val, config: TrainConfig, params: DapParams | None = None,
          callback=None) -> tuple[DapParams, TrainLog]:
    """Full training loop; deterministic in ``config.seed``."""
    table = PairTable(ds_train)
    if params is None:
        params = init_params(table.scene_Z.shape[-1], table.text_Z.shape[-1], config)
    opt = make_optimizer(config)
    dcfg = config.dap_config()
    log = TrainLog()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for step, idx in enumerate(make_batches(len(table), config.batch_size, config.seed, epoch)):
            loss, params = train_step(table.batch(idx), params, config, opt, epoch, step)
            losses.append(loss)
        r1p = r1t = None
        if ds_val is not None and config.validate_every_epoch:
            m = evalkit.evaluate(ds_val, params, dcfg, ks=(1,))
            r1p, r1t = m.p2t[1], m.t2p[1]
        rec = EpochRecord(epoch, float(np.mean(losses)), r1p, r1t, time.perf_counter() - t0)
        log.records.append(rec)
        if callback is not None:
            callback(rec)
    return params, log
