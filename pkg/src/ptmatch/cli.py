"""Command-line entry point.

Exit codes: 0 success, 2 usage/config/input error, 3 training divergence,
4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalkit, formats, gradcheck, rncl, synthgen, trainer
from .config import RunConfig
from .errors import PtmError, TrainingDivergenceError

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _writable(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)


# -- commands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    if args.noise_rate is not None:
        cfg = replace(cfg, noise_rate=args.noise_rate)
    ds, splits = synthgen.build_benchmark(cfg.generator, cfg.noise_rate, cfg.split_fractions)
    out = Path(args.out)
    formats.write_dataset(out, ds, splits, {
        "noise_rate": cfg.noise_rate,
        "split_fractions": list(cfg.split_fractions),
        "config_digest": cfg.digest(),
    })
    print(f"wrote {len(ds.scenes)} scenes, {len(ds.texts)} texts "
          f"({len(ds.noisy_text_ids())} noisy) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args).with_train(
        loss=args.loss, epochs=args.epochs, learning_rate=args.lr, alpha=args.alpha, tau=args.tau,
        batch_size=args.batch_size,
    )
    ds, splits, meta = formats.read_dataset(args.data)
    train_ds = formats.split_subset(ds, splits, "train")
    val_ds = formats.split_subset(ds, splits, "val") if splits.get("val") else None
    tc = cfg.train

    def report(rec):
        r1 = "" if rec.val_r1_t2p is None else f"  val R@1 p2t {rec.val_r1_p2t:.1f} t2p {rec.val_r1_t2p:.1f}"
        print(f"epoch {rec.epoch:3d}  loss {rec.mean_loss:.5f}{r1}", file=sys.stderr)

    try:
        params, log = trainer.train(train_ds, val_ds, tc, callback=None if args.quiet else report)
    except TrainingDivergenceError as exc:
        _err(f"training diverged: {exc}")
        return EXIT_DIVERGED
    ck_path = Path(args.out)
    _writable(ck_path)
    run_digest = formats.digest({"train": tc.to_dict(), "data": meta.get("config_digest")})
    formats.save_checkpoint(ck_path, params, tc.to_dict(), run_digest)
    log_path = Path(args.log) if args.log else ck_path.parent / "trainlog.jsonl"
    formats.write_trainlog(log_path, log.as_dicts(include_time=args.log_timing))
    print(f"wrote checkpoint {ck_path} and log {log_path}")
    return EXIT_OK


def _dap_config(ck):
    tc = trainer.TrainConfig(**ck["train_config"])
    return tc.dap_config()


def _check_dims(params, ds):
    for modality, samples in (("pointcloud", ds.scenes), ("text", ds.texts)):
        if samples:
            got = samples[0].features.Z.shape[1]
            want = params.d_f(modality)
            if got != want:
                raise formats.FormatError(
                    f"{modality} feature dim mismatch: checkpoint expects d_f={want}, dataset has d_f={got}"
                )


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    params, ck = formats.load_checkpoint(args.checkpoint)
    ds, splits, meta = formats.read_dataset(args.data)
    _check_dims(params, ds)
    split = args.split or cfg.eval_split
    part = formats.split_subset(ds, splits, split)
    metrics = evalkit.evaluate(part, params, _dap_config(ck), ks=cfg.ks)
    d = metrics.to_dict(formats.digest({
        "checkpoint": ck.get("config_digest"), "data": meta.get("config_digest"), "split": split,
        "ks": list(cfg.ks),
    }))
    out = Path(args.out)
    _writable(out)
    formats.dump_json(out, d)
    print(metrics.summary())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = gradcheck.run(n_kernel=args.configs, n_graph=args.graph_configs,
                            seed=args.seed or 0, corrupt_op=args.corrupt_op)
    for r in results:
        print(r.line())
    failing = [r.name for r in results if not r.passed]
    print(f"total {time.perf_counter() - t0:.1f}s")
    if failing:
        _err(f"gradient check failed for: {', '.join(failing)}")
        return EXIT_VERIFY
    return EXIT_OK


def loss_scan_rows(alphas, grid: int):
    """Point rows (alpha, S, loss, grad) and one summary row per alpha.

    The grid is uniform in -log(1 - S), which starts at S = 0 and resolves
    thresholds close to 1 (1 - e^-4 is about 0.98).
    """
    u_max = 2.0 * max(alphas) + 2.0
    S = -np.expm1(-np.linspace(0.0, u_max, grid))
    rows = []
    for a in alphas:
        loss = rncl.rnc_pair_loss(S, a)
        grad = rncl.rnc_pair_grad(S, a)
        for s, l, g in zip(S, loss, grad):
            rows.append({"kind": "point", "alpha": a, "S": float(s), "loss": float(l), "grad": float(g)})
        rep = rncl.find_threshold(a)
        rows.append({
            "kind": "summary", "alpha": a, "s_star": rep.s_star,
            "cand_exp_neg_alpha": rep.candidates["1-exp(-alpha)"],
            "cand_exp_one_minus_alpha": rep.candidates["1-exp(1-alpha)"],
            "matched": rep.matched or "none", "loss": rep.max_loss,
            "sign_changes": rncl.count_sign_changes(grad),
        })
    return rows


LOSS_SCAN_FIELDS = ["kind", "alpha", "S", "loss", "grad", "s_star", "cand_exp_neg_alpha",
                    "cand_exp_one_minus_alpha", "matched", "sign_changes"]


def cmd_loss_scan(args) -> int:
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError:
        _err(f"cannot parse alphas {args.alphas!r}")
        return EXIT_USAGE
    if args.grid < 10:
        _err(f"grid must be >= 10, got {args.grid}")
        return EXIT_USAGE
    rows = loss_scan_rows(alphas, args.grid)
    out = Path(args.out)
    _writable(out)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_SCAN_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        if r["kind"] == "summary":
            print(f"alpha={r['alpha']:g}  S*={r['s_star']:.8f}  matches {r['matched']}  max loss {r['loss']:.6f}")
    return EXIT_OK


def cmd_attn_dump(args) -> int:
    params, ck = formats.load_checkpoint(args.checkpoint)
    ds, _, _ = formats.read_dataset(args.data)
    _check_dims(params, ds)
    by_id = {s.id: s.features for s in ds.scenes}
    by_id.update({t.id: t.features for t in ds.texts})
    ids = [i for i in args.ids.split(",") if i]
    unknown = [i for i in ids if i not in by_id]
    if unknown or not ids:
        _err(f"unknown sample ids: {unknown}" if unknown else "no sample ids given")
        return EXIT_USAGE
    cfg = _dap_config(ck)
    records = [evalkit.attention_dump(by_id[i], params, cfg, sample_id=i) for i in ids]
    out = Path(args.out)
    _writable(out)
    formats.dump_json(out, {"format_version": formats.FORMAT_VERSION, "records": records})
    print(f"wrote {len(records)} attention records to {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _global_flags(p, suppress):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=default, help="overrides generator and training seeds")
    p.add_argument("--threads", type=int, default=default, help="cap on BLAS threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptmatch", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("gen", cmd_gen, "generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--noise-rate", type=float)

    p = add("train", cmd_train, "train dual attention parameters")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="train log path (default: trainlog.jsonl next to the checkpoint)")
    p.add_argument("--loss", choices=rncl.LOSS_KINDS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--log-timing", action="store_true", help="include wall time in the train log")
    p.add_argument("--quiet", action="store_true")

    p = add("eval", cmd_eval, "Recall@K of a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "test"))

    p = add("gradcheck", cmd_gradcheck, "finite-difference verification of all gradients")
    p.add_argument("--configs", type=int, default=100, help="random cases per kernel op")
    p.add_argument("--graph-configs", type=int, default=102, help="random full-graph cases (all losses)")
    p.add_argument("--corrupt-op", help=argparse.SUPPRESS)

    p = add("loss-scan", cmd_loss_scan, "tabulate the per-pair robust loss and its threshold")
    p.add_argument("--alphas", default="0.5,1,2,4")
    p.add_argument("--grid", type=int, default=1000)
    p.add_argument("--out", required=True)

    p = add("attn-dump", cmd_attn_dump, "dump token and dual attention weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ids", required=True, help="comma-separated scene/text ids")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except TrainingDivergenceError as exc:
        _err(str(exc))
        return EXIT_DIVERGED
    except (PtmError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
