"""Shared test utilities: finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np

from acgate.autodiff import Tensor, backward


def finite_difference_grad(fn, params: list[Tensor], eps: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of the scalar fn() w.r.t. each param.

    fn must rebuild its graph from the params' current .data on every
    call (define-by-run), so perturbing .data in place is enough.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn().item()
            flat[i] = orig - eps
            f_minus = fn().item()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def analytic_grad(fn, params: list[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
            for p in params]


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Elementwise |a-b| relative to max(1, |a|, |b|), maxed over entries."""
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(fn, params: list[Tensor], tol: float = 1e-4,
                    eps: float = 1e-5) -> float:
    an = analytic_grad(fn, params)
    fd = finite_difference_grad(fn, params, eps=eps)
    worst = max(max_rel_err(a, f) for a, f in zip(an, fd))
    assert worst <= tol, f"gradient mismatch: rel err {worst:.3e} > {tol}"
    return worst
