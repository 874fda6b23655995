"""Dense float64 arrays with reverse-mode gradients over a fixed op set.

Every op takes :class:`Tensor` operands (plain arrays are wrapped as
constants), computes its value eagerly with numpy and records a backward
rule.  :func:`backward` walks the recorded graph once in reverse creation
order, which is a valid topological order because parents are always
created before their children.

Batched operands are supported where the embedding pipeline needs them:
``matmul`` follows numpy's stacked-matrix semantics and the elementwise
binary ops broadcast, with gradients summed back onto the operand shape.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    DomainError,
    EvaluationError,
    UsageError,
)

EPS_NORM = 1e-12
EPS_REL = 1e-12

_counter = itertools.count()


class Tensor:
    """A node in the gradient graph.

    Leaves created with ``requires_grad=True`` are trainable slots; every
    other node is either a constant or the output of an op.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "_id")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        arr = np.array(value, dtype=np.float64) if op == "leaf" else np.asarray(value, dtype=np.float64)
        if op == "leaf" and not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise DomainError(f"non-finite leaf value at index {tuple(int(i) for i in bad)}")
        self.value = arr
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._id = next(_counter)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    """Create a trainable leaf."""
    return Tensor(value, requires_grad=True)


def _make(value, parents, backward_fn, op):
    return Tensor(value, parents=parents, backward_fn=backward_fn, op=op)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's stacked-matrix semantics (1-D operands allowed)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, shapes {av.shape} and {bv.shape}")
    inner_a = av.shape[-1]
    inner_b = bv.shape[0] if bv.ndim == 1 else bv.shape[-2]
    if inner_a != inner_b:
        raise DimensionError(f"matmul: inner dimensions differ, shapes {av.shape} and {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError:
        raise DimensionError(f"matmul: incompatible batch shapes {av.shape} and {bv.shape}") from None

    def backward(g):
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = _unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(av.shape)
        gb = _unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(bv.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.value.ndim < 2:
        raise DimensionError(f"transpose: need at least 2 dims, got shape {a.shape}")
    return _make(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    x = a.value
    try:
        out = x.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(x.shape),), "reshape")


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "subtract")
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        "subtract",
    )


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return _make(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        "hadamard",
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def _first_bad(mask):
    return tuple(int(i) for i in np.argwhere(mask)[0])


def log1m(a) -> Tensor:
    """log(1 - x), accurate for small x; requires x < 1."""
    a = as_tensor(a)
    x = a.value
    bad = ~(x < 1.0)
    if np.any(bad):
        raise DomainError(f"log1m: input must be < 1, got {x[bad][0]!r} at index {_first_bad(bad)}")
    return _make(np.log1p(-x), (a,), lambda g: (-g / (1.0 - x),), "log1m")


def log(a) -> Tensor:
    """Natural log; requires x > 0."""
    a = as_tensor(a)
    x = a.value
    bad = ~(x > 0.0)
    if np.any(bad):
        raise DomainError(f"log: input must be > 0, got {x[bad][0]!r} at index {_first_bad(bad)}")
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def pow(a, p: float) -> Tensor:  # noqa: A001 - mirrors the op name
    """x ** p for a scalar exponent; fractional exponents need x >= 0."""
    a = as_tensor(a)
    p = float(p)
    x = a.value
    if not p.is_integer():
        bad = x < 0.0
        if np.any(bad):
            raise DomainError(
                f"pow: negative base {x[bad][0]!r} with fractional exponent {p} at index {_first_bad(bad)}"
            )
    out = np.power(x, p)

    def backward(g):
        if p == 0.0:
            return (np.zeros_like(x),)
        return (g * p * np.power(x, p - 1.0),)

    return _make(out, (a,), backward, "pow")


def clamp_max(a, hi: float) -> Tensor:
    """min(x, hi); gradient is blocked where the clamp is active."""
    a = as_tensor(a)
    x = a.value
    passed = x <= hi
    return _make(np.minimum(x, hi), (a,), lambda g: (g * passed,), "clamp_max")


_ELEMENTWISE = {
    "add": add,
    "subtract": subtract,
    "hadamard": hadamard,
    "scale": scale,
    "log1m": log1m,
    "log": log,
    "pow": pow,
}


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch to one of the elementwise ops by name."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise UsageError(f"unknown elementwise kind {kind!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*operands)


# -- reductions and normalizations ------------------------------------------


def _check_axis(x, axis, op):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")
    if x.shape[axis] == 0:
        raise DimensionError(f"{op}: empty axis {axis} in shape {x.shape}")


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilized by subtracting the slice maximum."""
    a = as_tensor(a)
    x = a.value
    _check_axis(x, axis, "softmax")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    s = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (a,), backward, "softmax")


def softmax_over_tokens(x, token_axis: int) -> Tensor:
    return softmax(x, axis=token_axis)


def mean(a, axis: int) -> Tensor:
    a = as_tensor(a)
    x = a.value
    _check_axis(x, axis, "mean")
    n = x.shape[axis]
    return _make(
        x.mean(axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),),
        "mean",
    )


def mean_over_tokens(x, token_axis: int = -2) -> Tensor:
    return mean(x, axis=token_axis)


def sum(a, axis=None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    x = a.value
    if axis is None:
        return _make(x.sum(), (a,), lambda g: (np.full(x.shape, g, dtype=np.float64),), "sum")
    _check_axis(x, axis, "sum")
    return _make(
        x.sum(axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),),
        "sum",
    )


def l2_normalize(a, axis: int = -1) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm."""
    a = as_tensor(a)
    x = a.value
    _check_axis(x, axis, "l2_normalize")
    with np.errstate(over="ignore", invalid="ignore"):
        norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    if not np.all(np.isfinite(norm)):
        raise DomainError(f"l2_normalize: non-finite norm at slice {_first_bad(~np.isfinite(norm))}")
    if np.any(norm <= EPS_NORM):
        idx = _first_bad(norm <= EPS_NORM)
        raise DegenerateInputError(f"l2_normalize: norm <= {EPS_NORM:g} at slice {idx}")
    u = x / norm

    def backward(g):
        return ((g - u * (g * u).sum(axis=axis, keepdims=True)) / norm,)

    return _make(u, (a,), backward, "l2_normalize")


# -- graph traversal --------------------------------------------------------


def topological_order(output: Tensor) -> list[Tensor]:
    """Nodes reachable from ``output``, children before parents."""
    seen = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen[node._id] = node
        stack.extend(node.parents)
    return [seen[k] for k in sorted(seen, reverse=True)]


def backward(output: Tensor, leaves: Sequence[Tensor] | None = None) -> list[np.ndarray]:
    """Propagate d(output)/d(node) through the graph.

    Sets ``.grad`` on every node that requires a gradient and returns the
    gradients of ``leaves`` (zeros for leaves the output does not reach).
    """
    if output.value.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
    order = topological_order(output)
    grads = {output._id: np.ones_like(output.value)}
    for node in order:
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = np.asarray(pg, dtype=np.float64)
    if leaves is None:
        return []
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]


def grad(fn: Callable[..., Tensor], *values) -> list[np.ndarray]:
    """Gradient of a scalar-valued ``fn`` with respect to each argument."""
    leaves = [parameter(v) for v in values]
    return backward(fn(*leaves), leaves)


# -- finite differences -----------------------------------------------------


def _scalar(out) -> float:
    v = out.value if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)
    if v.size != 1:
        raise UsageError(f"function under check must return a scalar, got shape {v.shape}")
    v = float(v.reshape(()))
    if not np.isfinite(v):
        raise EvaluationError(f"function returned non-finite value {v!r}")
    return v


def numeric_gradient(fn, params: Sequence[np.ndarray], h: float = 1e-5, mode: str = "central",
                     return_floor: bool = False):
    """Finite-difference gradient of ``fn(*params)`` for every coordinate.

    With ``return_floor=True`` also returns, per coordinate, the size of
    the floating-point cancellation error in the difference quotient.
    """
    if h <= 0:
        raise UsageError(f"step h must be positive, got {h}")
    if mode not in ("central", "forward"):
        raise UsageError(f"unknown finite-difference mode {mode!r}")
    params = [np.array(p, dtype=np.float64) for p in params]
    f0 = _scalar(fn(*params)) if mode == "forward" else None
    grads, floors = [], []
    ulp = np.finfo(np.float64).eps
    for p in params:
        g = np.zeros_like(p)
        fl = np.zeros_like(p)
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = _scalar(fn(*params))
            if mode == "central":
                flat[idx] = orig - h
                fm = _scalar(fn(*params))
                g.reshape(-1)[idx] = (fp - fm) / (2 * h)
                fl.reshape(-1)[idx] = 16 * ulp * (abs(fp) + abs(fm)) / (2 * h)
            else:
                g.reshape(-1)[idx] = (fp - f0) / h
                fl.reshape(-1)[idx] = 16 * ulp * (abs(fp) + abs(f0)) / h
            flat[idx] = orig
        grads.append(g)
        floors.append(fl)
    return (grads, floors) if return_floor else grads


def relative_error(analytic, numeric, floor=None) -> float:
    """Worst coordinate of |a - n| / (|a| + |n| + eps).

    Coordinates whose disagreement is within ``floor`` (the roundoff of the
    difference quotient) count as exact matches.
    """
    worst = 0.0
    floor = floor if floor is not None else [None] * len(analytic)
    for a, n, fl in zip(analytic, numeric, floor):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        if a.size == 0:
            continue
        diff = np.abs(a - n)
        if fl is not None:
            diff = np.where(diff <= fl, 0.0, diff)
        err = diff / (np.abs(a) + np.abs(n) + EPS_REL)
        worst = max(worst, float(err.max()))
    return worst


def finite_difference_check(fn, params, h: float = 1e-5, mode: str = "central", analytic=None,
                            roundoff_floor: bool = False) -> float:
    """Compare analytic and finite-difference gradients of a scalar function.

    Args:
        fn: Pure function of the parameter arrays. For the finite
            differences it is called with plain arrays; unless ``analytic``
            is given it is also called with trainable leaves and must
            return a scalar Tensor built from this module's ops.
        params: Point at which to compare.
        h: Finite-difference step.
        mode: ``"central"`` or ``"forward"``.
        analytic: Precomputed analytic gradients, one array per parameter.
        roundoff_floor: Treat disagreements below the cancellation error
            of the difference quotient as exact. Needed when some gradient
            coordinates are zero by construction.

    Returns:
        Maximum relative error over all coordinates.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    if analytic is None:
        leaves = [parameter(p) for p in params]
        out = fn(*leaves)
        _scalar(out)
        analytic = backward(out, leaves)
    numeric, floors = numeric_gradient(fn, params, h=h, mode=mode, return_floor=True)
    return relative_error(analytic, numeric, floors if roundoff_floor else None)
