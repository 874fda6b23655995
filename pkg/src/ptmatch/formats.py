"""On-disk formats: dataset directories, checkpoints, train logs and metrics.

Everything is JSON or JSON Lines. Python's float repr is the shortest
string that round-trips, so values survive a write/read cycle exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dap import DapParams, TokenFeatures
from .errors import PtmError
from .synthgen import Dataset, GeneratorSpec, Scene, Text, subset

FORMAT_VERSION = 1


class FormatError(PtmError, ValueError):
    """A file is missing, unreadable or does not match the expected schema."""

    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def digest(obj) -> str:
    """Short stable hash of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_json(path, expect_version=True):
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError("file not found", path) from None
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot parse: {exc}", path) from None
    if expect_version:
        _check_version(obj, path)
    return obj


def _check_version(obj, path):
    if not isinstance(obj, dict) or obj.get("format_version") != FORMAT_VERSION:
        got = obj.get("format_version") if isinstance(obj, dict) else None
        raise FormatError(f"unsupported format_version {got!r} (expected {FORMAT_VERSION})", path)


def _write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def _read_jsonl(path):
    path = Path(path)
    rows = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        rows.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise FormatError(f"line {lineno}: {exc}", path) from None
    except FileNotFoundError:
        raise FormatError("file not found", path) from None
    return rows


# -- dataset directory ------------------------------------------------------


def write_dataset(out_dir, ds: Dataset, splits: dict, meta_extra: dict | None = None):
    """Write ``meta.json``, ``scenes.jsonl``, ``texts.jsonl`` and ``noise.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "generator": ds.spec.to_dict() if ds.spec else None,
        "seed": ds.spec.seed if ds.spec else None,
        "splits": splits,
    }
    meta.update(meta_extra or {})
    dump_json(out / "meta.json", meta)
    _write_jsonl(out / "scenes.jsonl", (
        {"id": s.id, "centroids": s.features.centroids.tolist(), "tokens": s.features.Z.tolist()}
        for s in ds.scenes
    ))
    _write_jsonl(out / "texts.jsonl", (
        {"id": t.id, "scene_id": t.scene_id, "tokens": t.features.Z.tolist()} for t in ds.texts
    ))
    dump_json(out / "noise.json", {
        "format_version": FORMAT_VERSION,
        "rate": ds.noise_rate,
        "clean_map": {t.id: ds.clean_map[t.id] for t in ds.texts},
    })


def read_dataset(data_dir):
    """Load a dataset directory. Returns ``(dataset, splits, meta)``."""
    d = Path(data_dir)
    meta = load_json(d / "meta.json")
    noise = load_json(d / "noise.json")
    scenes, texts = [], []
    try:
        for row in _read_jsonl(d / "scenes.jsonl"):
            scenes.append(Scene(row["id"], TokenFeatures(np.array(row["tokens"]), "pointcloud", np.array(row["centroids"]))))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad scene record: {exc}", d / "scenes.jsonl") from None
    try:
        for row in _read_jsonl(d / "texts.jsonl"):
            texts.append(Text(row["id"], row["scene_id"], TokenFeatures(np.array(row["tokens"]), "text")))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad text record: {exc}", d / "texts.jsonl") from None
    try:
        spec = GeneratorSpec(**meta["generator"]) if meta.get("generator") else None
        ds = Dataset(scenes, texts, dict(noise["clean_map"]), float(noise["rate"]), spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"inconsistent dataset: {exc}", d) from None
    splits = meta.get("splits") or {"train": ds.scene_ids, "val": [], "test": ds.scene_ids}
    known = set(ds.scene_ids)
    for name, ids in splits.items():
        if not set(ids) <= known:
            raise FormatError(f"split {name!r} references unknown scenes", d / "meta.json")
    return ds, splits, meta


def split_subset(ds: Dataset, splits: dict, name: str) -> Dataset:
    """Scenes of one split plus every text whose clean scene is among them."""
    ids = splits.get(name, [])
    wanted = set(ids)
    return subset(ds, ids, [t.id for t in ds.texts if ds.clean_map[t.id] in wanted])


# -- checkpoints ------------------------------------------------------------


def checkpoint_dict(params: DapParams, train_config: dict, config_digest: str) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config_digest": config_digest,
        "train_config": train_config,
        "d_c": params.d_c,
        "d_f": {"pointcloud": params.d_f("pointcloud"), "text": params.d_f("text")},
        "params": {
            name: {"shape": list(params.arrays[name].shape), "values": params.arrays[name].reshape(-1).tolist()}
            for name in params.names()
        },
    }


def save_checkpoint(path, params: DapParams, train_config: dict, config_digest: str):
    dump_json(path, checkpoint_dict(params, train_config, config_digest))


def load_checkpoint(path):
    """Returns ``(params, checkpoint_dict)``."""
    ck = load_json(path)
    try:
        arrays = {
            name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in ck["params"].items()
        }
        return DapParams(arrays), ck
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad checkpoint: {exc}", path) from None


def write_trainlog(path, rows):
    _write_jsonl(path, ({"format_version": FORMAT_VERSION, **r} for r in rows))
