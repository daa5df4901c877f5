"""Dense float64 tensors with tape-based reverse-mode differentiation.

Convention used throughout the package: the last axis of a tensor holds
features, and the second-to-last (when present) is the sequence/time axis,
so a batch of token sequences is (B, T, F).

Every op checks its operands, records its parents on the implicit tape,
and refuses to produce non-finite values silently.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """Operands with incompatible shapes."""


class UsageError(ValueError):
    """An operation was called outside its contract."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, probing, timing)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus a lazily allocated same-shape gradient buffer.

    Tensors built by ops remember their parents and a backward rule;
    ``backward()`` replays the tape in reverse topological order and
    accumulates gradients into every reachable tensor that requires them.
    Values are immutable once created except for the grad buffer (and the
    optimizer's in-place parameter update).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise FloatingPointError("tensor holds non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all ancestors."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar, got shape {self.shape}")
        order = _topo_order(self)
        if self.grad is None:
            self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; recurrence tapes (LSTM over long sequences) overflow
    # Python's recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def make_op(data, parents, backward) -> Tensor:
    """Build an op result; `backward(out_grad)` must route grads to parents.

    Exposed so modules with bespoke gradients (the CRF likelihood) can join
    the tape without reimplementing bookkeeping.
    """
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


accumulate_grad = _acc


# ---------------------------------------------------------------------------
# elementwise and linear ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape} differ")
    out = a.data + b.data

    def backward(g):
        _acc(a, g if a.shape == out.shape else g.sum().reshape(a.shape))
        _acc(b, g if b.shape == out.shape else g.sum().reshape(b.shape))

    return make_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = a.data * b.data

    def backward(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return make_op(out, (a, b), backward)


def mul_const(x: Tensor, arr: np.ndarray) -> Tensor:
    """Multiply by a constant, broadcastable array (no gradient into arr)."""
    arr = np.asarray(arr, dtype=np.float64)
    out = x.data * arr
    if out.shape != x.shape:
        raise ShapeMismatchError(
            f"mul_const: broadcasting {arr.shape} over {x.shape} changed the shape"
        )

    def backward(g):
        _acc(x, g * arr)

    return make_op(out, (x,), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        _acc(x, g * c)

    return make_op(x.data * c, (x,), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """w·x + b over the last axis: (..., n_in) -> (..., n_out)."""
    if w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeMismatchError(f"affine: W must be 2-d and b 1-d, got {w.shape}, {b.shape}")
    n_out, n_in = w.data.shape
    if x.data.shape[-1] != n_in or b.data.shape[0] != n_out:
        raise ShapeMismatchError(
            f"affine: x {x.shape} incompatible with W {w.shape} and b {b.shape}"
        )
    out = x.data @ w.data.T + b.data

    def backward(g):
        _acc(x, g @ w.data)
        g2 = g.reshape(-1, n_out)
        _acc(w, g2.T @ x.data.reshape(-1, n_in))
        _acc(b, g2.sum(axis=0))

    return make_op(out, (x, w, b), backward)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """w·x without bias, same shape contract as affine."""
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[1]:
        raise ShapeMismatchError(f"linear: x {x.shape} incompatible with W {w.shape}")
    out = x.data @ w.data.T

    def backward(g):
        _acc(x, g @ w.data)
        _acc(w, g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.data.shape[-1]))

    return make_op(out, (x, w), backward)


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 fixed to 0
    pos = x.data > 0

    def backward(g):
        _acc(x, g * pos)

    return make_op(np.maximum(x.data, 0.0), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        _acc(x, g * (1.0 - out * out))

    return make_op(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = np.where(
        x.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x.data))),
        np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))),
    )

    def backward(g):
        _acc(x, g * out * (1.0 - out))

    return make_op(out, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        _acc(x, g * out)

    return make_op(out, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log-softmax along the last axis."""
    if x.data.ndim < 1 or x.data.shape[-1] < 1:
        raise ShapeMismatchError(f"log_softmax: need at least one class, got {x.shape}")
    m = x.data.max(axis=-1, keepdims=True)
    z = x.data - m
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(g):
        _acc(x, g - np.exp(out) * g.sum(axis=-1, keepdims=True))

    return make_op(out, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    return exp(log_softmax(x))


# ---------------------------------------------------------------------------
# shape and indexing ops
# ---------------------------------------------------------------------------

def concat(xs: list[Tensor]) -> Tensor:
    """Concatenate along the feature (last) axis."""
    if not xs:
        raise UsageError("concat: empty input list")
    lead = xs[0].data.shape[:-1]
    for t in xs:
        if t.data.shape[:-1] != lead:
            raise ShapeMismatchError(
                f"concat: leading dims differ, {t.shape} vs {xs[0].shape}"
            )
    out = np.concatenate([t.data for t in xs], axis=-1)
    widths = [t.data.shape[-1] for t in xs]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            _acc(t, g[..., lo:hi])

    return make_op(out, tuple(xs), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[..., start:stop].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        _acc(x, gx)

    return make_op(out, (x,), backward)


def shift_time(x: Tensor, offset: int) -> Tensor:
    """y[..., t, :] = x[..., t + offset, :]; zero where out of range."""
    if x.data.ndim < 2:
        raise ShapeMismatchError(f"shift_time: need a time axis, got shape {x.shape}")
    t_len = x.data.shape[-2]
    out = np.zeros_like(x.data)
    n = t_len - abs(offset)
    if n > 0:
        if offset >= 0:
            out[..., :n, :] = x.data[..., offset:, :]
        else:
            out[..., -offset:, :] = x.data[..., :n, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        if n > 0:
            if offset >= 0:
                gx[..., offset:, :] = g[..., :n, :]
            else:
                gx[..., :n, :] = g[..., -offset:, :]
        _acc(x, gx)

    return make_op(out, (x,), backward)


def time_slice(x: Tensor, t: int) -> Tensor:
    """x[..., t, :] -> (..., F)."""
    out = x.data[..., t, :].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., t, :] = g
        _acc(x, gx)

    return make_op(out, (x,), backward)


def stack_time(xs: list[Tensor]) -> Tensor:
    """Stack per-step tensors (..., F) into (..., T, F)."""
    if not xs:
        raise UsageError("stack_time: empty input list")
    out = np.stack([t.data for t in xs], axis=-2)

    def backward(g):
        for i, t in enumerate(xs):
            _acc(t, g[..., i, :])

    return make_op(out, tuple(xs), backward)


def gather_time(x: Tensor, idx: np.ndarray) -> Tensor:
    """Reorder time steps per batch row: y[b, t] = x[b, idx[b, t]]."""
    idx = np.asarray(idx)
    if x.data.ndim != 3 or idx.shape != x.data.shape[:2]:
        raise ShapeMismatchError(f"gather_time: x {x.shape} vs idx {idx.shape}")
    rows = np.arange(x.data.shape[0])[:, None]
    out = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        _acc(x, gx)

    return make_op(out, (x,), backward)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of an embedding table: ids (...,) -> (..., E)."""
    ids = np.asarray(ids)
    out = table.data[ids]

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))

    return make_op(out, (table,), backward)


def take_index_last(x: Tensor, ids: np.ndarray) -> Tensor:
    """y[..., t] = x[..., t, ids[..., t]] (gather one class per position)."""
    ids = np.asarray(ids)
    if ids.shape != x.data.shape[:-1]:
        raise ShapeMismatchError(f"take_index_last: x {x.shape} vs ids {ids.shape}")
    out = np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, ids[..., None], g[..., None], axis=-1)
        _acc(x, gx)

    return make_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        _acc(x, np.full_like(x.data, np.asarray(g).item()))

    return make_op(np.float64(x.data.sum()), (x,), backward)


def sum_last(x: Tensor) -> Tensor:
    out = x.data.sum(axis=-1)

    def backward(g):
        _acc(x, np.repeat(g[..., None], x.data.shape[-1], axis=-1))

    return make_op(out, (x,), backward)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of x over positions where mask is True."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeMismatchError(f"masked_mean: x {x.shape} vs mask {mask.shape}")
    m = int(mask.sum())
    if m == 0:
        raise UsageError("masked_mean: mask selects no positions")

    def backward(g):
        _acc(x, np.asarray(g).item() * mask / m)

    return make_op(np.float64(x.data[mask].sum() / m), (x,), backward)


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def dropout_mask(shape, rate: float, rng) -> Tensor:
    """Inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate).

    `rng` is an integer seed or a numpy Generator; the same seed always
    reproduces the same mask.
    """
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout rate must be in [0, 1), got {rate}")
    gen = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    if rate == 0.0:
        return Tensor(np.ones(shape))
    keep = gen.random(shape) >= rate
    return Tensor(keep.astype(np.float64) / (1.0 - rate))


# ---------------------------------------------------------------------------
# Adam with global-norm gradient clipping
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter Adam moments; zero at step 0, step count monotone."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, **hyper) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data), **hyper)


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def clip_gradients(params: list[Tensor], clip_norm: float) -> float:
    """Scale all gradients so their global norm is at most clip_norm.

    Returns the pre-clip norm. clip_norm <= 0 disables clipping.
    """
    norm = global_grad_norm(params)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm; aborting update")
    if clip_norm > 0 and norm > clip_norm:
        factor = clip_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


def adam_step(param: Tensor, state: AdamState, clip_norm: float = 0.0) -> None:
    """One bias-corrected Adam update; the grad is zeroed afterwards.

    For multi-parameter models, clip the global norm with `clip_gradients`
    first and leave clip_norm at 0 here; passing clip_norm treats this
    parameter as the whole set.
    """
    g = param.grad if param.grad is not None else np.zeros_like(param.data)
    if not np.isfinite(g).all():
        raise FloatingPointError("non-finite gradient in adam_step; aborting update")
    if clip_norm > 0:
        norm = float(np.sqrt((g * g).sum()))
        if norm > clip_norm:
            g = g * (clip_norm / norm)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    param.grad = None


class Adam:
    """Mini-batch Adam over a parameter list with global-norm clipping."""

    def __init__(self, params: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, clip_norm: float = 0.0):
        self.params = list(params)
        self.clip_norm = clip_norm
        self.states = [
            AdamState.for_param(p, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for p in self.params
        ]

    def step(self) -> float:
        norm = clip_gradients(self.params, self.clip_norm)
        for p, s in zip(self.params, self.states):
            adam_step(p, s)
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
