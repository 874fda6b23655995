"""Dual attention pooling of token features into a shared embedding space.

Each modality has its own Query/Value projections and two learnable keys
shared by every sample: a token key scoring how informative each token is,
and a feature key scoring each feature dimension per token.  The two
attention maps multiply into a dual attention that weights the Values
before mean pooling and l2 normalization.

All functions accept an optional leading batch axis; token axis is -2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffkernel as dk
from .errors import ConfigurationError
from .posenc import batch_position_embedding

MODALITIES = ("pointcloud", "text")
_PREFIX = {"pointcloud": "p", "text": "t"}
PARAM_SUFFIXES = ("W_Q", "b_Q", "W_V", "b_V", "key_token", "key_feature")


@dataclass
class TokenFeatures:
    """Token features of one sample (patches of a scene or words of a text)."""

    Z: np.ndarray
    modality: str
    centroids: np.ndarray | None = None

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.modality not in MODALITIES:
            raise ConfigurationError(f"unknown modality {self.modality!r}")
        if self.Z.ndim != 2 or self.Z.shape[0] < 1:
            raise ConfigurationError(f"Z must be (n >= 1, d_f), got shape {self.Z.shape}")
        if not np.all(np.isfinite(self.Z)):
            raise ConfigurationError("Z contains non-finite entries")
        if self.modality == "pointcloud":
            if self.centroids is None:
                raise ConfigurationError("point-cloud features need centroids")
            self.centroids = np.asarray(self.centroids, dtype=np.float64)
            if self.centroids.shape != (self.Z.shape[0], 2):
                raise ConfigurationError(
                    f"centroids shape {self.centroids.shape} does not match {self.Z.shape[0]} tokens"
                )
        elif self.centroids is not None:
            raise ConfigurationError("text features must not carry centroids")

    @property
    def n_tokens(self) -> int:
        return self.Z.shape[0]


@dataclass(frozen=True)
class DapConfig:
    """Architecture switches. The defaults give the full model."""

    d_c: int = 32
    feature_softmax_axis: str = "token"
    use_token_attention: bool = True
    use_feature_attention: bool = True
    use_position_embedding: bool = True
    position_fusion: str = "sum"
    position_scale_by_count: bool = True

    def __post_init__(self):
        if self.d_c < 2 or self.d_c % 2:
            raise ConfigurationError(f"d_c must be a positive even integer, got {self.d_c}")
        if self.feature_softmax_axis not in ("token", "feature"):
            raise ConfigurationError(f"feature_softmax_axis must be 'token' or 'feature', got {self.feature_softmax_axis!r}")


class DapParams:
    """Named parameter arrays for both modalities.

    Names are ``"<m>.<suffix>"`` with ``m`` in ``{"p", "t"}`` and the
    suffixes in :data:`PARAM_SUFFIXES`.
    """

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        self._validate()

    def _validate(self):
        expected = {f"{m}.{s}" for m in "pt" for s in PARAM_SUFFIXES}
        if set(self.arrays) != expected:
            missing = sorted(expected - set(self.arrays))
            extra = sorted(set(self.arrays) - expected)
            raise ConfigurationError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        for m in "pt":
            d_f, d_c = self.arrays[f"{m}.W_Q"].shape
            shapes = {
                "W_Q": (d_f, d_c),
                "b_Q": (d_c,),
                "W_V": (d_f, d_c),
                "b_V": (d_c,),
                "key_token": (d_c,),
                "key_feature": (d_c, d_c),
            }
            for s, shp in shapes.items():
                got = self.arrays[f"{m}.{s}"].shape
                if got != shp:
                    raise ConfigurationError(f"{m}.{s} has shape {got}, expected {shp}")
        if self.arrays["p.W_Q"].shape[1] != self.arrays["t.W_Q"].shape[1]:
            raise ConfigurationError("point-cloud and text common dimensions differ")

    @classmethod
    def init(cls, d_f_p: int, d_f_t: int, d_c: int, rng: np.random.Generator) -> "DapParams":
        """Fan-scaled uniform projections, zero biases, small Gaussian keys."""
        arrays = {}
        for m, d_f in (("p", d_f_p), ("t", d_f_t)):
            bound = np.sqrt(6.0 / (d_f + d_c))
            arrays[f"{m}.W_Q"] = rng.uniform(-bound, bound, size=(d_f, d_c))
            arrays[f"{m}.b_Q"] = np.zeros(d_c)
            arrays[f"{m}.W_V"] = rng.uniform(-bound, bound, size=(d_f, d_c))
            arrays[f"{m}.b_V"] = np.zeros(d_c)
            arrays[f"{m}.key_token"] = rng.normal(0.0, 0.02, size=d_c)
            arrays[f"{m}.key_feature"] = rng.normal(0.0, 0.02, size=(d_c, d_c))
        return cls(arrays)

    @property
    def d_c(self) -> int:
        return self.arrays["p.W_Q"].shape[1]

    def d_f(self, modality: str) -> int:
        return self.arrays[f"{_PREFIX[modality]}.W_Q"].shape[0]

    def names(self) -> list[str]:
        return sorted(self.arrays)

    def copy(self) -> "DapParams":
        return DapParams({k: v.copy() for k, v in self.arrays.items()})

    def leaves(self) -> dict[str, dk.Tensor]:
        """Fresh trainable leaves, one per parameter array."""
        return {k: dk.parameter(self.arrays[k]) for k in self.names()}

    def constants(self) -> dict[str, dk.Tensor]:
        return {k: dk.Tensor(self.arrays[k]) for k in self.names()}

    def equals(self, other: "DapParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.names()
        )


def modality_params(tensors: dict[str, dk.Tensor], modality: str) -> dict[str, dk.Tensor]:
    prefix = _PREFIX[modality]
    return {s: tensors[f"{prefix}.{s}"] for s in PARAM_SUFFIXES}


# -- stages -----------------------------------------------------------------


def project(Z, W_Q, b_Q, W_V, b_V):
    """Queries and Values through one fully connected map each."""
    Z = dk.as_tensor(Z)
    d_f = dk.as_tensor(W_Q).shape[0]
    if Z.shape[-1] != d_f:
        raise ConfigurationError(f"token feature dim {Z.shape[-1]} does not match projection input dim {d_f}")
    Q = dk.add(dk.matmul(Z, W_Q), b_Q)
    V = dk.add(dk.matmul(Z, W_V), b_V)
    return Q, V


def token_attention(Q, key_token, E=None):
    """Token weights ``softmax_tokens((Q [+ E]) . key)``, shape ``(..., n, 1)``.

    The trailing singleton axis broadcasts the weights across every feature
    column, which is the stacked token-level attention map.
    """
    Q = dk.as_tensor(Q)
    key_token = dk.as_tensor(key_token)
    d_c = Q.shape[-1]
    if key_token.shape != (d_c,):
        raise ConfigurationError(f"token key shape {key_token.shape} does not match d_c={d_c}")
    if E is not None:
        E = dk.as_tensor(E)
        if E.shape[-2:] != Q.shape[-2:]:
            raise ConfigurationError(f"position embedding shape {E.shape} does not match queries {Q.shape}")
        Q = dk.add(Q, E)
    logits = dk.matmul(Q, dk.reshape(key_token, (d_c, 1)))
    return dk.softmax(logits, axis=-2)


def feature_attention(Q, key_feature, axis: str = "token"):
    """Per-feature attention ``softmax(Q . key^T)``, normalized over tokens by default."""
    Q = dk.as_tensor(Q)
    key_feature = dk.as_tensor(key_feature)
    d_c = Q.shape[-1]
    if key_feature.shape != (d_c, d_c):
        raise ConfigurationError(f"feature key shape {key_feature.shape} does not match d_c={d_c}")
    logits = dk.matmul(Q, dk.transpose(key_feature))
    return dk.softmax(logits, axis=-2 if axis == "token" else -1)


def dual_aggregate(token_weights, feature_weights, V):
    """l2-normalized token mean of ``(token ⊙ feature attention) ⊙ V``."""
    A = dk.hadamard(token_weights, feature_weights)
    pooled = dk.mean(dk.hadamard(A, V), axis=-2)
    return dk.l2_normalize(pooled, axis=-1)


def _uniform_tokens(Q):
    n = Q.shape[-2]
    return dk.Tensor(np.full(Q.shape[:-1] + (1,), 1.0 / n))


def attention_maps(Z, modality: str, tensors: dict[str, dk.Tensor], config: DapConfig, centroids=None):
    """Run the attention stages, returning ``(token_weights, feature_weights, V)``.

    ``token_weights`` has shape ``(..., n, 1)``; the other two are
    ``(..., n, d_c)``.
    """
    mp = modality_params(tensors, modality)
    Q, V = project(Z, mp["W_Q"], mp["b_Q"], mp["W_V"], mp["b_V"])
    E = None
    if modality == "pointcloud" and config.use_position_embedding:
        if centroids is None:
            raise ConfigurationError("point-cloud embedding needs centroids")
        c = np.asarray(centroids, dtype=np.float64)
        batched = c.ndim == 3
        E = batch_position_embedding(
            c if batched else c[None], config.d_c, config.position_fusion, config.position_scale_by_count
        )
        if not batched:
            E = E[0]
    if config.use_token_attention:
        a_tok = token_attention(Q, mp["key_token"], E)
    else:
        a_tok = _uniform_tokens(Q)
    if config.use_feature_attention:
        a_feat = feature_attention(Q, mp["key_feature"], config.feature_softmax_axis)
    else:
        a_feat = dk.Tensor(np.ones(Q.shape))
    return a_tok, a_feat, V


def embed_tensor(Z, modality: str, tensors: dict[str, dk.Tensor], config: DapConfig, centroids=None):
    """Gradient-tracked embedding of one sample ``(n, d_f)`` or a stack ``(B, n, d_f)``."""
    return dual_aggregate(*attention_maps(Z, modality, tensors, config, centroids))


def embed(features: TokenFeatures, params: DapParams, config: DapConfig | None = None) -> np.ndarray:
    """Unit-norm common embedding of one sample."""
    config = config or DapConfig(d_c=params.d_c)
    _check_config(params, config)
    out = embed_tensor(features.Z, features.modality, params.constants(), config, features.centroids)
    return out.value


def embed_many(samples: list[TokenFeatures], params: DapParams, config: DapConfig | None = None,
               chunk: int = 256) -> np.ndarray:
    """Embed a list of same-modality samples, stacking equal-length runs."""
    config = config or DapConfig(d_c=params.d_c)
    _check_config(params, config)
    if not samples:
        return np.zeros((0, params.d_c))
    consts = params.constants()
    out = np.empty((len(samples), params.d_c))
    lengths = {s.n_tokens for s in samples}
    if len(lengths) > 1:
        for i, s in enumerate(samples):
            out[i] = embed_tensor(s.Z, s.modality, consts, config, s.centroids).value
        return out
    modality = samples[0].modality
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        Z = np.stack([s.Z for s in part])
        cents = np.stack([s.centroids for s in part]) if modality == "pointcloud" else None
        out[start:start + len(part)] = embed_tensor(Z, modality, consts, config, cents).value
    return out


def _check_config(params: DapParams, config: DapConfig):
    if params.d_c != config.d_c:
        raise ConfigurationError(f"parameters have d_c={params.d_c} but config says {config.d_c}")
