"""Minimal reverse-mode differentiation engine on float64 numpy arrays.

The graph is recorded implicitly: every tensor produced by an operation
carries a per-thread creation index, its parent tensors, and a closure
that pushes the output gradient into those parents.  ``backward`` sorts
the reachable subgraph by creation index and replays it in exact reverse
append order, touching each node once.

Scope is deliberately narrow: the operations below are exactly what the
recurrent forecaster family in this package needs (no general
broadcasting, no higher-order derivatives, no GPU).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, UsageError

_state = threading.local()


def _tls():
    if not hasattr(_state, "counter"):
        _state.counter = 0
        _state.grad_enabled = True
        _state.flops = 0
    return _state


def _next_id() -> int:
    s = _tls()
    s.counter += 1
    return s.counter


def grad_enabled() -> bool:
    return _tls().grad_enabled


class no_grad:
    """Context manager disabling graph recording (evaluation mode)."""

    def __enter__(self):
        s = _tls()
        self._prev = s.grad_enabled
        s.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _tls().grad_enabled = self._prev
        return False


def reset_flop_counter() -> None:
    _tls().flops = 0


def flop_count() -> int:
    """Multiply-accumulate counter for matmul / lag-aggregation /
    elementwise work since the last reset (used by scaling tests)."""
    return _tls().flops


def _count(n: int) -> None:
    _tls().flops += int(n)


class Tensor:
    """Node of the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_node_id", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._node_id = _next_id()
        self._backward_done = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        """Same values, cut from the graph (no gradient flows through)."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return take(self, key)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def square(self):
        return square(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode accumulation from a scalar loss into every leaf that
    requires a gradient.  A loss node can be backpropagated only once."""
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_done:
        raise UsageError("backward already ran for this loss; rebuild the graph")
    loss._backward_done = True

    # Reachable subgraph, deduplicated by identity.
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)

    nodes.sort(key=lambda t: t._node_id, reverse=True)
    loss._accumulate(np.ones_like(loss.data))
    for node in nodes:
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)


# ----------------------------------------------------------------------
# elementwise / structural operations
# ----------------------------------------------------------------------

def _binary_shapes_ok(a: np.ndarray, b: np.ndarray) -> bool:
    # Allowed: identical shapes, scalar with anything, or a 1-D row
    # broadcast over the trailing axis of a 2-D batch (bias add).
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return True
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return True
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return True
    return False


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == () or int(np.prod(shape)) == 1:
        return np.sum(g).reshape(shape)
    # row vector broadcast over 2-D batch
    return g.sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a.data, b.data):
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data + b.data
    _count(out_data.size)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a.data, b.data):
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data - b.data
    _count(out_data.size)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a.data, b.data):
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data * b.data
    _count(out_data.size)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(-a.data, (a,), back)


def square(a: Tensor) -> Tensor:
    _count(a.size)

    def back(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul supports 2-D operands only")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree {a.shape} x {b.shape}")
    out_data = a.data @ b.data
    _count(2 * a.shape[0] * a.shape[1] * b.shape[1])

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), back)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    _count(a.size)

    def back(g):
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    return _make(y, (a,), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    _count(a.size)

    def back(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    return _make(y, (a,), back)


def softmax(logits: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Temperature softmax along ``axis``, stabilized by max subtraction."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("softmax received non-finite logits")
    u = logits.data / temperature
    u = u - u.max(axis=axis, keepdims=True)
    e = np.exp(u)
    y = e / e.sum(axis=axis, keepdims=True)
    _count(3 * logits.size)

    def back(g):
        if logits.requires_grad:
            dot = np.sum(g * y, axis=axis, keepdims=True)
            logits._accumulate(y * (g - dot) / temperature)

    return _make(y, (logits,), back)


def sum_all(a: Tensor) -> Tensor:
    _count(a.size)

    def back(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g)))

    return _make(np.sum(a.data), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    _count(n)

    def back(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g) / n))

    return _make(np.mean(a.data), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    def back(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


def take(a: Tensor, key) -> Tensor:
    """Basic-indexing slice; backward scatters into a zero buffer."""
    out_data = a.data[key]

    def back(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[key] = g
            a._accumulate(buf)

    return _make(np.array(out_data, copy=True), (a,), back)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    datas = [p.data for p in parts]
    out_data = np.concatenate(datas, axis=axis)
    offsets = np.cumsum([0] + [d.shape[axis] for d in datas])

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _make(out_data, tuple(parts), back)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p == 0.0:
        return a
    if rng is None:
        raise UsageError("dropout in training mode needs an RNG")
    keep = (rng.random(a.data.shape) >= p).astype(np.float64) / (1.0 - p)
    _count(a.size)

    def back(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _make(a.data * keep, (a,), back)


def lag_context(x_seq: Tensor, omega: Tensor, t0: int, t1: int) -> Tensor:
    """Lag-weighted aggregation of a projected input stream.

    ``x_seq`` is (N, T, F); ``omega`` is (N, K) simplex rows over lags
    1..K.  Output row j (target step t = t0 + j, for t in [t0, t1]) is
    sum_k omega[:, k-1] * x_seq[:, t-k, :].  Requires t0 >= K so every
    lag index is in range; the contemporaneous x_seq[:, t, :] never
    enters the output.
    """
    n, t_total, f = x_seq.shape
    _, k_max = omega.shape
    if t0 < k_max:
        raise ShapeError(f"lag context needs t0 >= K (got t0={t0}, K={k_max})")
    if t1 >= t_total or t1 < t0:
        raise ShapeError(f"invalid target range [{t0}, {t1}] for T={t_total}")
    steps = t1 - t0 + 1
    out_data = np.zeros((n, steps, f))
    w = omega.data
    for k in range(1, k_max + 1):
        out_data += w[:, k - 1, None, None] * x_seq.data[:, t0 - k:t1 - k + 1, :]
    _count(2 * n * steps * k_max * f)

    def back(g):
        if x_seq.requires_grad:
            gx = np.zeros_like(x_seq.data)
            for k in range(1, k_max + 1):
                gx[:, t0 - k:t1 - k + 1, :] += w[:, k - 1, None, None] * g
            x_seq._accumulate(gx)
        if omega.requires_grad:
            gw = np.empty_like(w)
            for k in range(1, k_max + 1):
                gw[:, k - 1] = np.sum(
                    g * x_seq.data[:, t0 - k:t1 - k + 1, :], axis=(1, 2))
            omega._accumulate(gw)

    return _make(out_data, (x_seq, omega), back)


# ----------------------------------------------------------------------
# LSTM cell
# ----------------------------------------------------------------------

@dataclass
class LstmWeights:
    """One cell's weights: input map (F_in x 4H), recurrent map (H x 4H)
    and bias (4H,), gate order i, f, g, o."""

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]


def lstm_cell(x: Tensor, h: Tensor, c: Tensor,
              w: LstmWeights) -> tuple[Tensor, Tensor]:
    """Standard LSTM gate equations, differentiable end to end.

    x: (N, F_in); h, c: (N, H).  Returns the next (h, c).
    """
    hs = w.hidden_size
    if x.shape[1] != w.w_x.shape[0] or h.shape[1] != hs or c.shape[1] != hs:
        raise ShapeError(
            f"lstm_cell: x{x.shape} h{h.shape} c{c.shape} vs weights "
            f"{w.w_x.shape}/{w.w_h.shape}")
    gates = add(add(matmul(x, w.w_x), matmul(h, w.w_h)), w.b)
    i = sigmoid(gates[:, 0 * hs:1 * hs])
    f = sigmoid(gates[:, 1 * hs:2 * hs])
    g = tanh(gates[:, 2 * hs:3 * hs])
    o = sigmoid(gates[:, 3 * hs:4 * hs])
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next
