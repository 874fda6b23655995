import csv
import json

import numpy as np
import pytest

from ptmatch import formats, trainer
from ptmatch.cli import main
from ptmatch.config import RunConfig
from ptmatch.errors import ConfigurationError

SMALL = {
    "generator": {"num_scenes": 30, "texts_per_scene": 3},
    "train": {"epochs": 2, "batch_size": 8},
}


@pytest.fixture()
def cfg_path(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.fixture()
def pipeline(tmp_path, cfg_path):
    data = tmp_path / "data"
    assert main(["--config", str(cfg_path), "--seed", "2", "gen", "--out", str(data)]) == 0
    ck = tmp_path / "run" / "ck.json"
    assert main(["--config", str(cfg_path), "--seed", "2", "train", "--data", str(data), "--out", str(ck), "--quiet"]) == 0
    return data, ck


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_gen_files_and_schema(tmp_path, cfg_path):
    out = tmp_path / "d"
    assert main(["gen", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert set(_files(out)) == {"meta.json", "scenes.jsonl", "texts.jsonl", "noise.json"}
    meta = json.loads((out / "meta.json").read_text())
    assert meta["format_version"] == 1 and meta["seed"] == 0
    noise = json.loads((out / "noise.json").read_text())
    text_ids = [json.loads(line)["id"] for line in (out / "texts.jsonl").read_text().splitlines()]
    assert sorted(noise["clean_map"]) == sorted(text_ids) and len(set(text_ids)) == len(text_ids)
    row = json.loads((out / "scenes.jsonl").read_text().splitlines()[0])
    assert set(row) == {"id", "centroids", "tokens"}


def test_gen_is_byte_identical(tmp_path, cfg_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["--config", str(cfg_path), "gen", "--out", str(a)])
    main(["--config", str(cfg_path), "gen", "--out", str(b)])
    assert _files(a) == _files(b)


def test_dataset_round_trip(tmp_path, cfg_path):
    out = tmp_path / "d"
    main(["--config", str(cfg_path), "gen", "--out", str(out)])
    ds, splits, _ = formats.read_dataset(out)
    formats.write_dataset(tmp_path / "e", ds, splits, {k: v for k, v in json.loads((out / "meta.json").read_text()).items()
                                                       if k not in ("format_version", "generator", "seed", "splits")})
    assert _files(out) == _files(tmp_path / "e")


def test_train_eval_round_trip(tmp_path, pipeline, capsys):
    data, ck = pipeline
    assert (ck.parent / "trainlog.jsonl").exists()
    rows = [json.loads(x) for x in (ck.parent / "trainlog.jsonl").read_text().splitlines()]
    assert len(rows) == 2 and all(r["format_version"] == 1 and "wall_time" not in r for r in rows)
    m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--out", str(m1)]) == 0
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--out", str(m2)]) == 0
    assert m1.read_bytes() == m2.read_bytes()
    d = json.loads(m1.read_text())
    assert set(d) == {"format_version", "p2t", "t2p", "rsum", "config_digest"}
    assert set(d["p2t"]) == set(d["t2p"]) == {"r1", "r5", "r10"}
    assert d["rsum"] == sum(d["p2t"].values()) + sum(d["t2p"].values())
    assert "rsum" in capsys.readouterr().out


def test_train_same_seed_same_log(tmp_path, cfg_path, pipeline):
    data, ck = pipeline
    ck2 = tmp_path / "again" / "ck.json"
    main(["--config", str(cfg_path), "--seed", "2", "train", "--data", str(data), "--out", str(ck2), "--quiet"])
    assert (ck.parent / "trainlog.jsonl").read_bytes() == (ck2.parent / "trainlog.jsonl").read_bytes()
    assert ck.read_bytes() == ck2.read_bytes()


def test_zero_lr_checkpoint_is_init(tmp_path, cfg_path, pipeline):
    data, _ = pipeline
    ck = tmp_path / "lr0" / "ck.json"
    assert main(["--config", str(cfg_path), "train", "--data", str(data), "--out", str(ck), "--lr", "0", "--quiet"]) == 0
    params, saved = formats.load_checkpoint(ck)
    tc = trainer.TrainConfig(**saved["train_config"])
    assert params.equals(trainer.init_params(32, 32, tc))


def test_eval_dimension_mismatch(tmp_path, pipeline, capsys):
    _, ck = pipeline
    cfg = tmp_path / "small_df.json"
    cfg.write_text(json.dumps({"generator": {"num_scenes": 30, "d_f": 16}}))
    other = tmp_path / "d16"
    main(["--config", str(cfg), "gen", "--out", str(other)])
    assert main(["eval", "--checkpoint", str(ck), "--data", str(other), "--out", str(tmp_path / "m.json")]) == 2
    err = capsys.readouterr().err
    assert "d_f=32" in err and "d_f=16" in err
    assert not (tmp_path / "m.json").exists()


def test_train_missing_file_names_it(tmp_path, pipeline, capsys):
    data, _ = pipeline
    (data / "texts.jsonl").unlink()
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "x.json")]) == 2
    assert "texts.jsonl" in capsys.readouterr().err


def test_unknown_format_version_rejected(tmp_path, pipeline):
    data, ck = pipeline
    d = json.loads(ck.read_text())
    d["format_version"] = 2
    ck.write_text(json.dumps(d))
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--out", str(tmp_path / "m.json")]) == 2


def test_unwritable_out(tmp_path, cfg_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["--config", str(cfg_path), "gen", "--out", str(blocker / "sub")]) == 2
    assert main(["loss-scan", "--grid", "10", "--out", str(blocker / "scan.csv")]) == 2


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"learning_rat": 0.1}}))
    assert main(["--config", str(bad), "gen", "--out", str(tmp_path / "d")]) == 2
    assert main(["--config", str(tmp_path / "missing.json"), "gen", "--out", str(tmp_path / "d")]) == 2
    assert main(["nonsense"]) == 2
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"ks": [0]})


def test_global_flags_either_side(tmp_path, cfg_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "7", "--threads", "1", "--config", str(cfg_path), "gen", "--out", str(a)]) == 0
    assert main(["gen", "--out", str(b), "--seed", "7", "--config", str(cfg_path), "--threads", "1"]) == 0
    assert _files(a) == _files(b)


def test_gradcheck_small_and_corrupted(capsys):
    assert main(["gradcheck", "--configs", "3", "--graph-configs", "6"]) == 0
    out = capsys.readouterr().out
    for op in ("matmul", "softmax", "l2_normalize", "dap+rnc", "dap+contrastive", "dap+complementary"):
        assert sum(line.split()[0] == op for line in out.splitlines() if line.strip()) == 1
    assert main(["gradcheck", "--configs", "3", "--graph-configs", "3", "--corrupt-op", "softmax"]) == 4
    assert "softmax" in capsys.readouterr().err


def test_loss_scan_csv(tmp_path):
    out = tmp_path / "scan.csv"
    assert main(["loss-scan", "--alphas", "0.5,1,2,4", "--grid", "10", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    for a in (0.5, 1.0, 2.0, 4.0):
        pts = [r for r in rows if r["kind"] == "point" and float(r["alpha"]) == a]
        assert len(pts) == 10
        assert float(pts[0]["S"]) == 0.0 and float(pts[0]["loss"]) == 0.0
        g = np.array([float(r["grad"]) for r in pts])
        assert np.count_nonzero(np.sign(g[:-1]) != np.sign(g[1:])) == 1
        (summ,) = [r for r in rows if r["kind"] == "summary" and float(r["alpha"]) == a]
        assert float(summ["cand_exp_neg_alpha"]) == pytest.approx(1 - np.exp(-a), abs=1e-15)
    (s1,) = [r for r in rows if r["kind"] == "summary" and float(r["alpha"]) == 1.0]
    assert abs(float(s1["s_star"]) - 0.6321205588) <= 1e-6
    assert main(["loss-scan", "--grid", "9", "--out", str(out)]) == 2


def test_attn_dump(tmp_path, pipeline):
    data, ck = pipeline
    out = tmp_path / "attn.json"
    assert main(["attn-dump", "--checkpoint", str(ck), "--data", str(data), "--ids", "s00,t00", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["format_version"] == 1
    assert [(r["id"], r["modality"]) for r in d["records"]] == [("s00", "pointcloud"), ("t00", "text")]
    for r in d["records"]:
        assert abs(sum(r["token_weights"]) - 1.0) <= 1e-12
    bad = tmp_path / "none.json"
    assert main(["attn-dump", "--checkpoint", str(ck), "--data", str(data), "--ids", "s00,zz", "--out", str(bad)]) == 2
    assert not bad.exists()


def test_run_config_round_trip(tmp_path):
    cfg = RunConfig.from_dict(SMALL).with_seed(9).with_train(tau=0.2, alpha=None)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    back = RunConfig.load(p)
    assert back == cfg and back.digest() == cfg.digest()
    assert back.generator.seed == back.train.seed == 9 and back.train.tau == 0.2
