"""Single-document run configuration shared by every CLI command."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .formats import digest
from .synthgen import DEFAULT_NOISE_RATE, GeneratorSpec
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise_rate: float = DEFAULT_NOISE_RATE
    split_fractions: tuple = (0.8, 0.1, 0.1)
    ks: tuple = (1, 5, 10)
    eval_split: str = "test"

    def __post_init__(self):
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigurationError(f"noise_rate must lie in [0, 1], got {self.noise_rate}")
        if self.eval_split not in ("train", "val", "test"):
            raise ConfigurationError(f"eval_split must be train, val or test, got {self.eval_split!r}")
        if not self.ks or any(int(k) < 1 for k in self.ks):
            raise ConfigurationError(f"ks must be positive integers, got {self.ks}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        allowed = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {unknown}")
        kw = dict(d)
        kw["generator"] = _section(GeneratorSpec, d.get("generator", {}), "generator")
        kw["train"] = _section(TrainConfig, d.get("train", {}), "train")
        if "split_fractions" in kw:
            kw["split_fractions"] = tuple(kw["split_fractions"])
        if "ks" in kw:
            kw["ks"] = tuple(int(k) for k in kw["ks"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        d["ks"] = list(self.ks)
        return d

    def digest(self) -> str:
        return digest(self.to_dict())

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, generator=replace(self.generator, seed=seed), train=replace(self.train, seed=seed))

    def with_train(self, **changes) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, train=replace(self.train, **changes)) if changes else self


def _section(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigurationError(f"config section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys in {name!r}: {unknown}")
    return cls(**d)
