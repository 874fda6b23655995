"""2-D sinusoidal position embedding for point-cloud patches."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DomainError

BASE = 10000.0


def axis_embedding(coord, p_n: int, dim: int, scale_by_count: bool = True) -> np.ndarray:
    """Sinusoidal code of one normalized coordinate per patch.

    Even dimensions ``k`` hold ``sin(c * p_n / BASE**(k/dim))`` and the odd
    dimension that follows holds the matching cosine, so dimensions ``k``
    and ``k+1`` share a frequency.

    Returns:
        Array of shape ``(len(coord), dim)``.
    """
    coord = np.asarray(coord, dtype=np.float64).reshape(-1)
    pos = coord * p_n if scale_by_count else coord
    even = np.arange(0, dim, 2, dtype=np.float64)
    freq = BASE ** (even / dim)
    angle = pos[:, None] / freq[None, :]
    out = np.empty((coord.size, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle[:, : dim // 2])
    return out


def patch_position_embedding(centroids, p_n: int | None = None, d_c: int = 32, fusion: str = "sum",
                             scale_by_count: bool = True) -> np.ndarray:
    """Fuse horizontal and vertical sinusoidal codes into a ``(p_n, d_c)`` matrix.

    ``fusion="sum"`` adds the two ``d_c``-dimensional codes. ``fusion="concat"``
    gives each axis ``d_c/2`` dimensions instead; unlike summation it
    distinguishes ``(h, v)`` from ``(v, h)``.

    The result is a constant: it never carries gradient.
    """
    c = np.asarray(centroids, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] < 1:
        raise ConfigurationError(f"centroids must have shape (p_n, 2) with p_n >= 1, got {c.shape}")
    if p_n is None:
        p_n = c.shape[0]
    if p_n != c.shape[0]:
        raise ConfigurationError(f"p_n={p_n} but {c.shape[0]} centroids given")
    if d_c % 2:
        raise ConfigurationError(f"d_c must be even, got {d_c}")
    outside = ~((c >= 0.0) & (c <= 1.0))
    if np.any(outside):
        j, a = np.argwhere(outside)[0]
        raise DomainError(f"centroid {j} coordinate {'hv'[a]}={c[j, a]!r} outside [0, 1]")
    return _fuse(c[:, 0], c[:, 1], p_n, d_c, fusion, scale_by_count)


def batch_position_embedding(centroids, d_c: int, fusion: str = "sum", scale_by_count: bool = True) -> np.ndarray:
    """Position embeddings for a stack of samples, shape ``(B, p_n, 2) -> (B, p_n, d_c)``."""
    c = np.asarray(centroids, dtype=np.float64)
    if c.ndim != 3 or c.shape[2] != 2:
        raise ConfigurationError(f"batched centroids must have shape (B, p_n, 2), got {c.shape}")
    b, p_n, _ = c.shape
    flat = c.reshape(-1, 2)
    patch_position_embedding(flat[:1], 1, d_c, fusion)  # validates d_c and fusion
    if np.any((flat < 0.0) | (flat > 1.0)):
        raise DomainError("batched centroid coordinate outside [0, 1]")
    return _fuse(flat[:, 0], flat[:, 1], p_n, d_c, fusion, scale_by_count).reshape(b, p_n, d_c)


def _fuse(h, v, p_n, d_c, fusion, scale_by_count):
    if fusion == "sum":
        return axis_embedding(h, p_n, d_c, scale_by_count) + axis_embedding(v, p_n, d_c, scale_by_count)
    if fusion == "concat":
        if d_c % 4:
            raise ConfigurationError(f"concat fusion needs d_c divisible by 4, got {d_c}")
        half = d_c // 2
        return np.concatenate(
            [axis_embedding(h, p_n, half, scale_by_count), axis_embedding(v, p_n, half, scale_by_count)], axis=1
        )
    raise ConfigurationError(f"unknown fusion {fusion!r}")
