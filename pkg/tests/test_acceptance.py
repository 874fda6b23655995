"""Acceptance criteria, one test and one PASS/FAIL line each."""

import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import VERDICTS
from ptmatch import dap, evalkit, formats, gradcheck, rncl, synthgen, trainer
from ptmatch.cli import main
from ptmatch.dap import DapConfig, DapParams, TokenFeatures
from ptmatch.trainer import TrainConfig


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def _splits(seed, noise):
    ds, splits = synthgen.build_benchmark(synthgen.GeneratorSpec(seed=seed), noise)
    return {name: formats.split_subset(ds, splits, name) for name in splits}


def test_1_gradient_suite():
    t0 = time.perf_counter()
    results = gradcheck.run()
    dt = time.perf_counter() - t0
    for r in results:
        print(r.line())
    worst = max(r.worst for r in results)
    graph_configs = sum(r.count for r in results if r.name.startswith("dap+"))
    ok = all(r.passed for r in results) and dt < 120 and min(r.count for r in results) >= 34 and graph_configs >= 100
    assert verdict(1, ok, f"{len(results)} checks, worst rel err {worst:.2e} (tol 1e-4), "
                          f"{graph_configs} graph configs, {dt:.1f}s (limit 120s)")


def test_2_loss_shape():
    notes, ok = [], True
    S = np.concatenate([np.linspace(1e-6, 0.999, 20000), 1 - np.logspace(-3, -11, 200)])
    for a in (0.5, 1.0, 2.0, 4.0):
        rep = rncl.find_threshold(a)
        changes = rncl.count_sign_changes(rncl.rnc_pair_grad(S, a))
        ok &= changes == 1 and rep.matched is not None
        notes.append(f"a={a:g}: S*={rep.s_star:.6f} matches {rep.matched}")
    one = rncl.find_threshold(1.0)
    ok &= abs(one.s_star - 0.6321) <= 1e-4 and abs(one.max_loss - 0.3679) <= 1e-4
    assert verdict(2, ok, "; ".join(notes) + f"; a=1 max loss {one.max_loss:.4f}")


def test_3_invariants():
    rng = np.random.default_rng(0)
    sim_err = norm_err = perm_err = lim_err = 0.0
    zero_exact = True
    for _ in range(20):
        K, d_c = int(rng.integers(2, 9)), 8
        params = DapParams.init(6, 6, d_c, rng)
        for n in params.names():
            if "key" in n:
                params.arrays[n] = rng.normal(0, 0.5, size=params.arrays[n].shape)
        cfg = DapConfig(d_c=d_c)
        P = dap.embed_many([TokenFeatures(rng.normal(size=(5, 6)), "pointcloud", rng.uniform(size=(5, 2)))
                            for _ in range(K)], params, cfg)
        T = dap.embed_many([TokenFeatures(rng.normal(size=(4, 6)), "text") for _ in range(K)], params, cfg)
        norm_err = max(norm_err, np.abs(np.linalg.norm(np.vstack([P, T]), axis=1) - 1).max())
        S_pt, S_tp = rncl.similarity_pair(P, T, float(rng.uniform(0.05, 1.0)))
        sim_err = max(sim_err, np.abs(S_pt.value.sum(1) - 1).max(), np.abs(S_tp.value.sum(1) - 1).max())
        ones = np.ones((K, K))
        zero_exact &= rncl.rnc_loss(S_pt, S_tp, ones, 2.0).value == 0.0
        zero_exact &= rncl.complementary_loss(S_pt, S_tp, ones).value == 0.0
        y = np.eye(K)
        lim_err = max(lim_err, abs(rncl.rnc_loss(S_pt, S_tp, y, 1e6).value - rncl.complementary_loss(S_pt, S_tp, y).value))
        Z, c = rng.normal(size=(4, 6)), rng.uniform(size=(4, 2))
        ref = dap.embed(TokenFeatures(Z, "pointcloud", c), params, cfg)
        for perm in itertools.permutations(range(4)):
            perm = list(perm)
            e = dap.embed(TokenFeatures(Z[perm], "pointcloud", c[perm]), params, cfg)
            perm_err = max(perm_err, np.abs(e - ref).max())
    ok = sim_err <= 1e-9 and norm_err <= 1e-9 and zero_exact and perm_err <= 1e-6 and lim_err <= 1e-4
    assert verdict(3, ok, f"row sums {sim_err:.1e}, norms {norm_err:.1e}, y=1 exact zero {zero_exact}, "
                          f"permutation {perm_err:.1e}, alpha=1e6 vs complementary {lim_err:.1e}")


def test_4_robustness_ordering():
    t0 = time.perf_counter()
    losses = ("rnc", "complementary", "contrastive")
    means = {}
    for noise in (0.0, 0.4):
        scores = {k: [] for k in losses}
        for seed in range(5):
            parts = _splits(seed, noise)
            for kind in losses:
                cfg = TrainConfig(loss=kind, seed=seed, validate_every_epoch=False)
                params, _ = trainer.train(parts["train"], None, cfg)
                scores[kind].append(evalkit.evaluate(parts["test"], params, cfg.dap_config()).rsum)
        means[noise] = {k: float(np.mean(v)) for k, v in scores.items()}
        print(f"noise {noise:.0%}: " + ", ".join(f"{k} {np.round(v, 1).tolist()}" for k, v in scores.items()))
    dt = time.perf_counter() - t0
    n = means[0.4]
    ordered = n["rnc"] >= n["complementary"] >= n["contrastive"]
    gap = n["rnc"] - n["contrastive"]
    spread = max(means[0.0].values()) - min(means[0.0].values())
    ok = ordered and gap >= 5 and spread <= 15 and dt < 1800
    fmt = lambda m: "/".join(f"{m[k]:.1f}" for k in losses)  # noqa: E731
    assert verdict(4, ok, f"40% noise rnc/comp/contr rSum {fmt(n)} (gap {gap:.1f} >= 5); "
                          f"0% {fmt(means[0.0])} (spread {spread:.1f} <= 15); {dt:.0f}s")


def test_5_dap_ablations():
    parts = _splits(0, synthgen.DEFAULT_NOISE_RATE)
    variants = {
        "full": {},
        "w/o token attention": {"use_token_attention": False},
        "w/o feature attention": {"use_feature_attention": False},
        "w/o position embedding": {"use_position_embedding": False},
    }
    rows, keys = [], set()
    for name, flags in variants.items():
        cfg = TrainConfig(validate_every_epoch=False, **flags)
        params, _ = trainer.train(parts["train"], None, cfg)
        d = evalkit.evaluate(parts["test"], params, cfg.dap_config()).to_dict()
        keys.add(json.dumps({k: sorted(v) if isinstance(v, dict) else None for k, v in d.items()}, sort_keys=True))
        rows.append(f"{name} {d['rsum']:.1f}")
    ok = len(keys) == 1 and len(rows) == 4
    assert verdict(5, ok, "test rSum: " + ", ".join(rows))


def test_6_determinism_and_chance(tmp_path):
    digests = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["--seed", "11", "gen", "--out", str(d / "data")]) == 0
        assert main(["--seed", "11", "train", "--data", str(d / "data"), "--out", str(d / "ck.json"), "--quiet"]) == 0
        assert main(["eval", "--checkpoint", str(d / "ck.json"), "--data", str(d / "data"),
                     "--out", str(d / "metrics.json")]) == 0
        digests.append((d / "metrics.json").read_bytes())
    identical = digests[0] == digests[1]

    parts = _splits(0, synthgen.DEFAULT_NOISE_RATE)
    n_test = len(parts["test"].scenes)
    r1 = [evalkit.evaluate(parts["test"], DapParams.init(32, 32, 32, np.random.default_rng([5, i])),
                           DapConfig(d_c=32), ks=(1,)).t2p[1] for i in range(20)]
    chance = 100.0 / n_test
    mean_r1 = float(np.mean(r1))
    within = chance / 3 <= mean_r1 <= 3 * chance
    assert verdict(6, identical and within, f"metrics byte-identical {identical}; untrained t2p R@1 {mean_r1:.2f} "
                                            f"over 20 inits vs chance {chance:.2f} (x3 band)")
