"""Randomized finite-difference verification of every kernel op and of the
full embedding + loss graph."""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass

import numpy as np

from . import dap, diffkernel as dk, rncl
from .dap import DapConfig, DapParams

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    worst: float
    count: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst <= TOLERANCE

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:<22s} {self.count:4d} configs  worst rel err {self.worst:.3e}  {status}"


def _projected(op_out, R):
    return dk.sum(dk.hadamard(R, op_out))


def _shape(rng, ndim, lo=1, hi=5):
    return tuple(int(x) for x in rng.integers(lo, hi + 1, size=ndim))


def _kernel_cases(rng):
    """One random (fn, params) case per kernel op; ``fn`` returns a scalar."""
    cases = {}

    b = int(rng.integers(0, 3))
    m, k, n = _shape(rng, 3)
    batch = (int(rng.integers(1, 4)),) if b == 1 else ()
    a_shape = batch + (m, k) if b != 2 else (k,)
    b_shape = (k, n)
    out_shape = np.matmul(np.zeros(a_shape), np.zeros(b_shape)).shape
    R = rng.normal(size=out_shape)
    cases["matmul"] = (lambda A, B, R=R: _projected(dk.matmul(A, B), R),
                       [rng.normal(size=a_shape), rng.normal(size=b_shape)])

    shp = _shape(rng, int(rng.integers(2, 4)))
    R = rng.normal(size=shp[:-2] + (shp[-1], shp[-2]))
    cases["transpose"] = (lambda X, R=R: _projected(dk.transpose(X), R), [rng.normal(size=shp)])

    shp = _shape(rng, 2)
    R = rng.normal(size=(shp[0] * shp[1],))
    cases["reshape"] = (lambda X, R=R: _projected(dk.reshape(X, (-1,)), R), [rng.normal(size=shp)])

    for name, op in (("add", dk.add), ("subtract", dk.subtract), ("hadamard", dk.hadamard)):
        shp = _shape(rng, 3)
        other = tuple(1 if rng.random() < 0.4 else s for s in shp)[int(rng.integers(0, 2)):]
        R = rng.normal(size=shp)
        cases[name] = (lambda X, Y, op=op, R=R: _projected(op(X, Y), R),
                       [rng.normal(size=shp), rng.normal(size=other)])

    shp = _shape(rng, 2)
    c = float(rng.normal())
    R = rng.normal(size=shp)
    cases["scale"] = (lambda X, R=R, c=c: _projected(dk.scale(X, c), R), [rng.normal(size=shp)])

    shp = _shape(rng, 2)
    R = rng.normal(size=shp)
    cases["log1m"] = (lambda X, R=R: _projected(dk.log1m(X), R), [rng.uniform(-2.0, 0.9, size=shp)])

    R = rng.normal(size=shp)
    cases["log"] = (lambda X, R=R: _projected(dk.log(X), R), [rng.uniform(0.1, 3.0, size=shp)])

    p = float(rng.uniform(-2.0, 3.0))
    R = rng.normal(size=shp)
    cases["pow"] = (lambda X, R=R, p=p: _projected(dk.pow(X, p), R), [rng.uniform(0.2, 2.0, size=shp)])

    R = rng.normal(size=shp)
    x = rng.normal(size=shp)
    x[np.abs(x - 0.3) < 0.05] += 0.2  # keep clear of the kink
    cases["clamp_max"] = (lambda X, R=R: _projected(dk.clamp_max(X, 0.3), R), [x])

    shp = _shape(rng, int(rng.integers(1, 4)))
    axis = int(rng.integers(-len(shp), len(shp)))
    R = rng.normal(size=shp)
    cases["softmax"] = (lambda X, R=R, axis=axis: _projected(dk.softmax(X, axis), R), [rng.normal(size=shp) * 2])

    R = rng.normal(size=np.delete(np.array(shp), axis).tolist() or ())
    cases["mean"] = (lambda X, R=R, axis=axis: _projected(dk.mean(X, axis), R), [rng.normal(size=shp)])
    cases["sum"] = (lambda X, R=R, axis=axis: _projected(dk.sum(X, axis), R), [rng.normal(size=shp)])

    R = rng.normal(size=shp)
    cases["l2_normalize"] = (lambda X, R=R, axis=axis: _projected(dk.l2_normalize(X, axis), R), [rng.normal(size=shp) + 0.1])
    return cases


def _graph_case(rng, loss_kind: str):
    """Random small batch through DAP and one loss, as a function of all parameters."""
    K = int(rng.integers(2, 9))
    n_p = int(rng.integers(1, 7))
    n_t = int(rng.integers(1, 7))
    d_c = int(rng.choice([2, 4, 6, 8, 16], p=[0.25, 0.3, 0.2, 0.2, 0.05]))
    d_f = int(rng.integers(2, 6))
    cfg = DapConfig(d_c=d_c, feature_softmax_axis=str(rng.choice(["token", "feature"])))
    params = DapParams.init(d_f, d_f, d_c, rng)
    # larger keys than the init so attention is far from uniform
    for name in params.names():
        if "key" in name or name.endswith("b_Q") or name.endswith("b_V"):
            params.arrays[name] = rng.normal(0.0, 0.5, size=params.arrays[name].shape)
    Zp = rng.normal(size=(K, n_p, d_f))
    cents = rng.uniform(0.0, 1.0, size=(K, n_p, 2))
    Zt = rng.normal(size=(K, n_t, d_f))
    tau = float(rng.uniform(0.1, 1.0))
    alpha = float(rng.choice([0.5, 1.0, 2.0, 4.0]))
    if loss_kind == "contrastive":
        y = np.eye(K)
    else:
        y = (rng.random((K, K)) < 0.2).astype(float)
        np.fill_diagonal(y, 1.0)
    names = params.names()
    lcfg = rncl.LossConfig(loss_kind, alpha, tau)

    def fn(*arrays):
        tensors = dict(zip(names, arrays))
        P = dap.embed_tensor(Zp, "pointcloud", tensors, cfg, cents)
        T = dap.embed_tensor(Zt, "text", tensors, cfg)
        S_pt, S_tp = rncl.similarity_pair(P, T, tau)
        return rncl.batch_loss(S_pt, S_tp, y, lcfg)

    return fn, [params.arrays[n] for n in names]


@contextlib.contextmanager
def corrupted(op_name: str | None, factor: float = 1.5):
    """Temporarily scale the backward rule of one kernel op (harness self-test)."""
    if op_name is None:
        yield
        return
    original = getattr(dk, op_name)

    def wrapper(*args, **kwargs):
        out = original(*args, **kwargs)
        bw = out.backward_fn
        if bw is not None:
            out.backward_fn = lambda g: tuple(factor * x for x in bw(g))
        return out

    setattr(dk, op_name, wrapper)
    try:
        yield
    finally:
        setattr(dk, op_name, original)


KERNEL_OPS = ("matmul", "transpose", "reshape", "add", "subtract", "hadamard", "scale", "log1m", "log",
              "pow", "clamp_max", "softmax", "mean", "sum", "l2_normalize")


def run(n_kernel: int = 100, n_graph: int = 102, seed: int = 0, corrupt_op: str | None = None,
        h: float = STEP) -> list[CheckResult]:
    """Check every kernel op on ``n_kernel`` random cases and the composed graph
    on ``n_graph`` random configurations split evenly over the three losses."""
    rng = np.random.default_rng(seed)
    results = []
    with corrupted(corrupt_op):
        worst = dict.fromkeys(KERNEL_OPS, 0.0)
        t0 = time.perf_counter()
        for _ in range(n_kernel):
            for name, (fn, params) in _kernel_cases(rng).items():
                err = dk.finite_difference_check(fn, params, h=h, roundoff_floor=True)
                worst[name] = max(worst[name], err)
        dt = (time.perf_counter() - t0) / len(KERNEL_OPS)
        results.extend(CheckResult(name, worst[name], n_kernel, dt) for name in KERNEL_OPS)
        per_loss = -(-n_graph // len(rncl.LOSS_KINDS))
        for kind in rncl.LOSS_KINDS:
            t0 = time.perf_counter()
            w = 0.0
            for _ in range(per_loss):
                fn, params = _graph_case(rng, kind)
                w = max(w, dk.finite_difference_check(fn, params, h=h, roundoff_floor=True))
            results.append(CheckResult(f"dap+{kind}", w, per_loss, time.perf_counter() - t0))
    return results
