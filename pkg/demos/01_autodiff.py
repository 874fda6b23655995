"""Reverse-mode gradients on numpy arrays, checked against finite differences."""

import numpy as np

from ptmatch import diffkernel as dk

# f(x) = x^2 at x = 3 has slope 6
x = dk.parameter(np.array(3.0))
(g,) = dk.backward(dk.hadamard(x, x), [x])
print("d/dx x^2 at 3:", g)

# a small composed function: sum(softmax(A @ B) * R)
rng = np.random.default_rng(0)
A, B, R = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(3, 5))


def f(a, b):
    return dk.sum(dk.hadamard(R, dk.softmax(dk.matmul(a, b), axis=-1)))


gA, gB = dk.grad(f, A, B)
print("grad shapes:", gA.shape, gB.shape)
print("relative error vs central differences:", dk.finite_difference_check(f, [A, B]))

# broadcasting is undone in the backward pass
g_bias = dk.grad(lambda m, b: dk.sum(dk.add(m, b)), np.zeros((6, 3)), np.zeros(3))[1]
print("bias gradient summed over 6 rows:", g_bias)

# the harness behind `ptmatch gradcheck`, here with a handful of cases
from ptmatch import gradcheck  # noqa: E402

for r in gradcheck.run(n_kernel=5, n_graph=6):
    print(r.line())
