#!/usr/bin/env python3
"""Tour of the reverse-mode engine: tensors, graphs, gradients, Adam.

Builds a tiny two-layer network on random data, checks one gradient
against central finite differences, and fits a quadratic bowl.
"""

import numpy as np

from acgate.autodiff import Tensor, backward, matmul, softmax
from acgate.optim import Adam

rng = np.random.default_rng(0)

print("== tensors and a scalar graph ==")
x = Tensor(2.0, requires_grad=True)
y = Tensor(3.0, requires_grad=True)
loss = x * y + x.square()
backward(loss)
print(f"loss = x*y + x^2 at (2, 3) -> {loss.item():.1f}")
print(f"d/dx = y + 2x = {x.grad}  d/dy = x = {y.grad}")

print("\n== matrix ops with gradient checking ==")
a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)


def f():
    return matmul(a, b).tanh().square().sum()


loss = f()
backward(loss)
analytic = a.grad.copy()

eps = 1e-5
fd = np.zeros_like(a.data)
flat, fdflat = a.data.reshape(-1), fd.reshape(-1)
for i in range(flat.size):
    orig = flat[i]
    flat[i] = orig + eps
    up = f().item()
    flat[i] = orig - eps
    down = f().item()
    flat[i] = orig
    fdflat[i] = (up - down) / (2 * eps)
print(f"max |analytic - finite difference| = {np.abs(analytic - fd).max():.2e}")

print("\n== temperature softmax ==")
logits = Tensor([2.0, 0.0, -1.0])
for tau in (2.0, 1.0, 0.25):
    w = softmax(logits, temperature=tau).data
    print(f"tau={tau:4.2f} -> {np.array2string(w, precision=3)}")

print("\n== Adam on a quadratic bowl ==")
w = Tensor(-4.0, requires_grad=True)
opt = Adam([w], lr=1e-1)
for step in range(300):
    opt.zero_grad()
    loss = (w - 3.0).square()
    backward(loss)
    opt.step()
print(f"argmin of (w-3)^2 found at w = {w.item():.6f}")
