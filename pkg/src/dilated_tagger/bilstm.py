"""Bidirectional LSTM token encoder, the recurrent baseline.

Standard cell (no peepholes): sigmoid input/forget/output gates, tanh
candidate and output squashing, forget-gate bias initialized to 1. The
backward direction is the forward scan over each sequence reversed within
its true length, so padding never leaks into real positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    UsageError,
    affine,
    concat,
    dropout_mask,
    embed,
    gather_time,
    linear,
    mul,
    sigmoid,
    slice_last,
    stack_time,
    tanh,
    time_slice,
)
from .encoder import SequenceTooLongError


@dataclass
class LstmDirection:
    """One direction's gate weights; z = W·x + U·h + b, gate order i,f,g,o."""

    w: Tensor  # (4h, n_in)
    u: Tensor  # (4h, h)
    b: Tensor  # (4h,)

    @classmethod
    def create(cls, n_in: int, hidden: int) -> "LstmDirection":
        from .tensor import parameter

        return cls(
            w=parameter(np.zeros((4 * hidden, n_in))),
            u=parameter(np.zeros((4 * hidden, hidden))),
            b=parameter(np.zeros(4 * hidden)),
        )

    @property
    def hidden(self) -> int:
        return self.u.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.w, self.u, self.b]


def lstm_step(x_t: Tensor, state: tuple[Tensor, Tensor],
              params: LstmDirection) -> tuple[Tensor, Tensor]:
    """One cell update: (h_prev, c_prev) -> (h_t, c_t)."""
    h_prev, c_prev = state
    h = params.hidden
    if h_prev.shape[-1] != h or c_prev.shape[-1] != h:
        raise UsageError(f"state width {h_prev.shape[-1]} != hidden size {h}")
    z = affine(x_t, params.w, params.b) + linear(h_prev, params.u)
    i = sigmoid(slice_last(z, 0, h))
    f = sigmoid(slice_last(z, h, 2 * h))
    g = tanh(slice_last(z, 2 * h, 3 * h))
    o = sigmoid(slice_last(z, 3 * h, 4 * h))
    c = mul(f, c_prev) + mul(i, g)
    return mul(o, tanh(c)), c


def lstm_scan(feats: Tensor, params: LstmDirection, counter=None) -> Tensor:
    """Run the cell left to right over (B, T, F); returns (B, T, h)."""
    b, t_len, _ = feats.shape
    h = params.hidden
    h_t = Tensor(np.zeros((b, h)))
    c_t = Tensor(np.zeros((b, h)))
    outputs = []
    for t in range(t_len):
        h_t, c_t = lstm_step(time_slice(feats, t), (h_t, c_t), params)
        outputs.append(h_t)
        if counter is not None:
            counter.add(1)
    return stack_time(outputs)


def reverse_within_length(t_len: int, lengths: np.ndarray) -> np.ndarray:
    """Index matrix reversing each row's first `length` steps, identity on pads."""
    idx = np.tile(np.arange(t_len), (len(lengths), 1))
    for row, n in enumerate(lengths):
        idx[row, :n] = np.arange(n - 1, -1, -1)
    return idx


@dataclass
class BiLstmEncoder:
    word_emb: Tensor
    shape_emb: Tensor
    fwd: LstmDirection
    bwd: LstmDirection
    out_w: Tensor  # (D, 2h)
    out_b: Tensor
    input_dropout: float = 0.0
    max_sequence_length: int = 8192

    kind = "bilstm"
    n_iterations = 1

    @property
    def hidden(self) -> int:
        return self.fwd.hidden

    def parameters(self) -> list[Tensor]:
        return (
            [self.word_emb, self.shape_emb]
            + self.fwd.parameters()
            + self.bwd.parameters()
            + [self.out_w, self.out_b]
        )

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def critical_path_length(self, t_len: int) -> int:
        # one step per timestep per direction; the directions themselves
        # could run concurrently but each is inherently sequential.
        return 2 * t_len

    def encode(self, word_ids: np.ndarray, shape_ids: np.ndarray,
               mask: np.ndarray | None = None, train: bool = False,
               rng=None, counter=None) -> list[Tensor]:
        """Single-element list holding the (..., T, D) class scores."""
        word_ids = np.asarray(word_ids)
        squeeze = word_ids.ndim == 1
        if squeeze:
            word_ids = word_ids[None, :]
            shape_ids = np.asarray(shape_ids)[None, :]
            if mask is not None:
                mask = np.asarray(mask)[None, :]
        t_len = word_ids.shape[-1]
        if t_len > self.max_sequence_length:
            raise SequenceTooLongError(
                f"sequence of {t_len} tokens exceeds cap {self.max_sequence_length}"
            )
        if train and rng is None and self.input_dropout > 0:
            raise UsageError("training with dropout requires an rng")

        feats = concat([embed(self.word_emb, word_ids), embed(self.shape_emb, shape_ids)])
        if train and self.input_dropout > 0:
            feats = mul(feats, dropout_mask(feats.shape, self.input_dropout, rng))

        lengths = (
            np.asarray(mask).sum(axis=-1).astype(int)
            if mask is not None
            else np.full(word_ids.shape[0], t_len, dtype=int)
        )
        rev = reverse_within_length(t_len, lengths)

        h_fwd = lstm_scan(feats, self.fwd, counter=counter)
        h_bwd = gather_time(lstm_scan(gather_time(feats, rev), self.bwd, counter=counter), rev)
        logits = affine(concat([h_fwd, h_bwd]), self.out_w, self.out_b)
        if squeeze:
            logits = slice_first_row(logits)
        return [logits]


def slice_first_row(x: Tensor) -> Tensor:
    """(1, T, D) -> (T, D)."""
    from .tensor import make_op, accumulate_grad

    out = x.data[0].copy()

    def backward(g):
        accumulate_grad(x, g[None, ...])

    return make_op(out, (x,), backward)
