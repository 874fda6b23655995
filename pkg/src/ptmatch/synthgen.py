"""Synthetic scene/description token features with controllable noisy correspondence.

A fixed vocabulary of unit-norm prototype vectors plays the role of object
categories. A scene is a set of distinct prototypes laid out as patches on
a jittered grid; a description echoes part of its scene's prototypes and
pads with generic filler tokens shared by every description.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dap import TokenFeatures
from .errors import ConfigurationError

DEFAULT_NOISE_RATE = 0.13


@dataclass(frozen=True)
class GeneratorSpec:
    num_scenes: int = 200
    texts_per_scene: int = 5
    p_n: int = 24
    t_n: int = 12
    d_f: int = 32
    num_prototypes: int = 40
    objects_per_scene: int = 8
    num_fillers: int = 8
    jitter_sigma: float = 0.1
    coverage_ratio: float = 0.5
    distractor_ratio: float = 0.25
    seed: int = 0

    def __post_init__(self):
        for name in ("num_scenes", "texts_per_scene", "p_n", "t_n", "d_f", "num_prototypes",
                     "objects_per_scene", "num_fillers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("coverage_ratio", "distractor_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.jitter_sigma < 0:
            raise ConfigurationError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        if self.objects_per_scene > min(self.num_prototypes, self.p_n):
            raise ConfigurationError(
                f"objects_per_scene={self.objects_per_scene} exceeds min(num_prototypes, p_n)"
                f"={min(self.num_prototypes, self.p_n)}"
            )
        if self.echo_count > self.t_n - self.filler_count:
            raise ConfigurationError(
                f"t_n={self.t_n} too small: {self.echo_count} coverage tokens plus "
                f"{self.filler_count} filler tokens required"
            )

    @property
    def echo_count(self) -> int:
        return max(1, math.ceil(self.coverage_ratio * self.objects_per_scene - 1e-9))

    @property
    def filler_count(self) -> int:
        return round_half_up(self.distractor_ratio * self.t_n)

    def to_dict(self) -> dict:
        return asdict(self)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class Scene:
    id: str
    features: TokenFeatures


@dataclass
class Text:
    id: str
    scene_id: str
    features: TokenFeatures


@dataclass
class Dataset:
    """Scenes, descriptions, their (possibly noisy) assignment and the clean truth."""

    scenes: list[Scene]
    texts: list[Text]
    clean_map: dict[str, str]
    noise_rate: float = 0.0
    spec: GeneratorSpec | None = None
    _scene_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = {s.id for s in self.scenes}
        for t in self.texts:
            if t.scene_id not in ids:
                raise ConfigurationError(f"text {t.id} references unknown scene {t.scene_id}")
            if t.id not in self.clean_map:
                raise ConfigurationError(f"text {t.id} missing from clean_map")
        self._scene_index = {s.id: i for i, s in enumerate(self.scenes)}

    @property
    def scene_ids(self) -> list[str]:
        return [s.id for s in self.scenes]

    def scene_index(self, scene_id: str) -> int:
        return self._scene_index[scene_id]

    def assignment(self) -> dict[str, str]:
        return {t.id: t.scene_id for t in self.texts}

    def noisy_text_ids(self) -> list[str]:
        return [t.id for t in self.texts if t.scene_id != self.clean_map[t.id]]


def _grid_centroids(p_n, jitter, rng):
    side = math.ceil(math.sqrt(p_n))
    cells = np.arange(p_n)
    base = np.stack([(cells % side + 0.5) / side, (cells // side + 0.5) / side], axis=1)
    return np.clip(base + rng.uniform(-0.5, 0.5, size=base.shape) * jitter / side, 0.0, 1.0)


def generate(spec: GeneratorSpec) -> Dataset:
    """Build a clean dataset; deterministic in ``spec.seed``.

    Each scene uses its own random substream derived from (seed, scene
    index), so scenes are independent of generation order.
    """
    root = np.random.default_rng(spec.seed)
    protos = root.normal(size=(spec.num_prototypes, spec.d_f))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    fillers = root.normal(size=(spec.num_fillers, spec.d_f))
    fillers /= np.linalg.norm(fillers, axis=1, keepdims=True)
    sigma = spec.jitter_sigma
    width = len(str(spec.num_scenes - 1))
    twidth = len(str(spec.num_scenes * spec.texts_per_scene - 1))

    scenes, texts, clean = [], [], {}
    for i in range(spec.num_scenes):
        rng = np.random.default_rng([spec.seed, i])
        objects = rng.choice(spec.num_prototypes, size=spec.objects_per_scene, replace=False)
        # every object gets at least one patch
        owner = np.concatenate([objects, rng.choice(objects, size=spec.p_n - objects.size)])
        rng.shuffle(owner)
        Z = protos[owner] + rng.normal(0.0, 1.0, size=(spec.p_n, spec.d_f)) * sigma
        cents = _grid_centroids(spec.p_n, 1.0, rng)
        sid = f"s{i:0{width}d}"
        scenes.append(Scene(sid, TokenFeatures(Z, "pointcloud", cents)))
        for k in range(spec.texts_per_scene):
            j = i * spec.texts_per_scene + k
            echoed = rng.choice(objects, size=spec.echo_count, replace=False)
            n_fill = spec.filler_count
            n_rest = spec.t_n - spec.echo_count - n_fill
            rows = np.concatenate([
                protos[echoed],
                protos[rng.choice(echoed, size=n_rest)],
                fillers[rng.choice(spec.num_fillers, size=n_fill)],
            ])
            rows = rows[rng.permutation(spec.t_n)]
            T = rows + rng.normal(0.0, 1.0, size=rows.shape) * sigma
            tid = f"t{j:0{twidth}d}"
            texts.append(Text(tid, sid, TokenFeatures(T, "text")))
            clean[tid] = sid
    return Dataset(scenes, texts, clean, 0.0, spec)


def inject_noise(ds: Dataset, rate: float = DEFAULT_NOISE_RATE, seed: int = 0) -> Dataset:
    """Reassign ``round(rate * N_t)`` randomly chosen texts to a different scene.

    Noise is applied relative to ``clean_map``: a selected text always lands
    on a scene other than its clean one. ``clean_map`` is copied unchanged.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigurationError(f"noise rate must lie in [0, 1], got {rate}")
    n_noisy = round_half_up(rate * len(ds.texts))
    if n_noisy and len(ds.scenes) < 2:
        raise ConfigurationError("noise injection needs at least two scenes")
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(ds.texts), size=n_noisy, replace=False).tolist()) if n_noisy else set()
    scene_ids = ds.scene_ids
    texts = []
    for k, t in enumerate(ds.texts):
        sid = ds.clean_map[t.id]
        if k in chosen:
            j = int(rng.integers(len(scene_ids) - 1))
            if j >= ds.scene_index(sid):
                j += 1
            sid = scene_ids[j]
        texts.append(Text(t.id, sid, t.features))
    return Dataset(list(ds.scenes), texts, dict(ds.clean_map), rate, ds.spec)


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Partition by clean scene; every text follows its clean scene.

    Split sizes are ``floor`` of each fraction times the scene count, with
    the remainder handed out in order of largest fractional part.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be three positive numbers summing to 1, got {tuple(fractions)}")
    n = len(ds.scenes)
    raw = fr * n
    counts = np.floor(raw + 1e-9).astype(int)
    for k in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    if np.any(counts == 0):
        raise ConfigurationError(f"split {tuple(fractions)} of {n} scenes leaves a split empty: {counts.tolist()}")
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(counts)[:-1]
    parts = []
    for idx in np.split(order, bounds):
        keep = sorted(idx.tolist())
        ids = {ds.scenes[i].id for i in keep}
        parts.append(subset(ds, [ds.scenes[i].id for i in keep], [t.id for t in ds.texts if ds.clean_map[t.id] in ids]))
    return tuple(parts)


def subset(ds: Dataset, scene_ids, text_ids) -> Dataset:
    """Restrict to the given scenes and texts; texts keep their assignment."""
    sids = set(scene_ids)
    tids = set(text_ids)
    scenes = [s for s in ds.scenes if s.id in sids]
    texts = [t for t in ds.texts if t.id in tids]
    clean = {t.id: ds.clean_map[t.id] for t in texts}
    return Dataset(scenes, texts, clean, ds.noise_rate, ds.spec)


def merge(parts, noise_rate: float) -> Dataset:
    """Recombine disjoint splits, ordering scenes and texts by id."""
    scenes = sorted((s for p in parts for s in p.scenes), key=lambda s: s.id)
    texts = sorted((t for p in parts for t in p.texts), key=lambda t: t.id)
    clean = {t.id: p.clean_map[t.id] for p in parts for t in p.texts}
    return Dataset(scenes, texts, clean, noise_rate, parts[0].spec)


def build_benchmark(spec: GeneratorSpec, noise_rate: float = DEFAULT_NOISE_RATE,
                    fractions=(0.8, 0.1, 0.1), seed: int | None = None):
    """Generate, split by scene, and inject noise inside each split.

    Noisy reassignments stay within a split, so no text ever points at a
    scene of another split.

    Returns:
        ``(dataset, splits)`` where ``splits`` maps ``"train"``, ``"val"``
        and ``"test"`` to sorted scene-id lists.
    """
    seed = spec.seed if seed is None else seed
    clean = generate(spec)
    parts = split(clean, fractions, seed=seed + 1)
    noisy = [inject_noise(p, noise_rate, seed=seed + 2 + k) for k, p in enumerate(parts)]
    names = ("train", "val", "test")
    return merge(noisy, noise_rate), {n: p.scene_ids for n, p in zip(names, noisy)}
