"""Iterated dilated-convolution token encoder.

A block is a stack of same-length (zero-padded) width-(2r+1) convolutions
whose dilations double layer by layer, each followed by ReLU. The encoder
embeds tokens, projects them to the block width, applies the block L_b
times (one shared parameter set unless configured otherwise), and projects
every block's output to per-class scores with a single shared matrix.

Plain stacked CNN baselines are the same code path with all dilations 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Tensor,
    UsageError,
    affine,
    concat,
    dropout_mask,
    embed,
    mul,
    mul_const,
    relu,
    shift_time,
)


class SequenceTooLongError(RuntimeError):
    """Input exceeds the configured sequence-length cap."""


# ---------------------------------------------------------------------------
# receptive fields
# ---------------------------------------------------------------------------

def receptive_field(layers: int, width: int, kind: str) -> int:
    """Effective input width after `layers` stacked convolutions.

    simple: layers*(width-1) + 1. dilated (doubling schedule): 2^(layers+1)-1,
    a closed form that assumes width 3.
    """
    if layers < 1:
        raise UsageError(f"need at least one layer, got {layers}")
    if width < 3 or width % 2 == 0:
        raise UsageError(f"width must be odd and >= 3, got {width}")
    if kind == "simple":
        return layers * (width - 1) + 1
    if kind == "dilated":
        if width != 3:
            raise UsageError("dilated closed form is only defined for width 3")
        return 2 ** (layers + 1) - 1
    raise UsageError(f"unknown convolution kind {kind!r}")


def conv_stack_receptive_field(dilations, radius: int) -> int:
    """Effective input width of a conv stack with arbitrary dilations."""
    return 1 + 2 * radius * int(sum(dilations))


def doubling_dilations(n_layers: int) -> list[int]:
    return [2 ** j for j in range(n_layers)]


def dilation_schedule(n_layers: int, kind: str = "doubling") -> list[int]:
    """Per-layer dilations for a block.

    "doubling" widens exponentially; "constant" is the alternative reading
    where every layer uses the largest width; "ones" is the plain stacked
    CNN baseline (no dilation).
    """
    if kind == "doubling":
        return doubling_dilations(n_layers)
    if kind == "constant":
        return [2 ** (n_layers - 1)] * n_layers
    if kind == "ones":
        return [1] * n_layers
    raise UsageError(f"unknown dilation schedule {kind!r}")


# ---------------------------------------------------------------------------
# layers and blocks
# ---------------------------------------------------------------------------

@dataclass
class DilatedConvLayer:
    """Width-(2r+1) convolution sampling every `dilation`-th neighbor.

    weight is (h_out, (2r+1)*h_in) over the window concatenated in offset
    order -r*d .. +r*d; out-of-range positions contribute zero vectors, so
    output length always equals input length.
    """

    weight: Tensor
    bias: Tensor
    radius: int
    dilation: int

    @classmethod
    def create(cls, h_in: int, h_out: int, radius: int, dilation: int) -> "DilatedConvLayer":
        from .tensor import parameter

        if radius < 1 or dilation < 1:
            raise UsageError(f"radius and dilation must be >= 1, got {radius}, {dilation}")
        w = parameter(np.zeros((h_out, (2 * radius + 1) * h_in)))
        b = parameter(np.zeros(h_out))
        return cls(w, b, radius, dilation)

    @property
    def h_out(self) -> int:
        return self.weight.shape[0]

    @property
    def h_in(self) -> int:
        return self.weight.shape[1] // (2 * self.radius + 1)

    def apply(self, x: Tensor) -> Tensor:
        window = concat([
            shift_time(x, k * self.dilation)
            for k in range(-self.radius, self.radius + 1)
        ])
        return affine(window, self.weight, self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def dilated_conv(x: Tensor, layer: DilatedConvLayer) -> Tensor:
    return layer.apply(x)


@dataclass
class Block:
    """One reusable stack of dilated convolutions, ReLU after each layer."""

    layers: list[DilatedConvLayer]

    @classmethod
    def create(cls, hidden: int, n_layers: int, radius: int,
               schedule: str = "doubling",
               extra_final_dilation1: bool = False) -> "Block":
        dilations = dilation_schedule(n_layers, schedule)
        if extra_final_dilation1:
            dilations = dilations + [1]
        layers = [
            DilatedConvLayer.create(hidden, hidden, radius, d) for d in dilations
        ]
        return cls(layers)

    @property
    def hidden(self) -> int:
        return self.layers[0].h_out

    @property
    def dilations(self) -> list[int]:
        return [l.dilation for l in self.layers]

    def receptive_field(self) -> int:
        return conv_stack_receptive_field(self.dilations, self.layers[0].radius)

    def apply(self, x: Tensor, pad_mask: np.ndarray | None = None,
              counter=None) -> Tensor:
        for layer in self.layers:
            x = relu(layer.apply(x))
            if pad_mask is not None:
                x = mul_const(x, pad_mask)
            if counter is not None:
                counter.add(1)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def apply_block(x: Tensor, block: Block, train_mode: bool = False) -> Tensor:
    # train_mode kept for interface symmetry; dropout on block outputs is
    # owned by the encoder.
    return block.apply(x)


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

@dataclass
class IdCnnEncoder:
    """Embeddings + entry projection + L_b block applications + shared
    per-class projection applied to every block output."""

    word_emb: Tensor             # (V, E)
    shape_emb: Tensor            # (5, S)
    entry_w: Tensor              # (h, E+S)
    entry_b: Tensor              # (h,)
    blocks: list[Block]          # one entry when shared, else n_iterations
    out_w: Tensor                # (D, h)
    out_b: Tensor                # (D,)
    n_iterations: int
    share_blocks: bool = True
    input_dropout: float = 0.0
    block_dropout: float = 0.0
    max_sequence_length: int = 8192

    kind = "idcnn"

    def block_for(self, k: int) -> Block:
        return self.blocks[0] if self.share_blocks else self.blocks[k]

    def parameters(self) -> list[Tensor]:
        out = [self.word_emb, self.shape_emb, self.entry_w, self.entry_b]
        for block in self.blocks:
            out.extend(block.parameters())
        out.extend([self.out_w, self.out_b])
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def receptive_field(self) -> int:
        per_block = (self.blocks[0].receptive_field() - 1) // 2
        return 1 + 2 * per_block * self.n_iterations

    def critical_path_length(self, t_len: int) -> int:
        # entry projection + every conv layer + output projection; positions
        # within a layer are independent, so depth alone is sequential.
        return 1 + sum(len(self.block_for(k).layers) for k in range(self.n_iterations)) + 1

    def encode(self, word_ids: np.ndarray, shape_ids: np.ndarray,
               mask: np.ndarray | None = None, train: bool = False,
               rng=None, counter=None) -> list[Tensor]:
        """Per-block class scores, one (..., T, D) tensor per application.

        Pad positions (mask False) are forced to zero features after every
        layer so windows that cross a padding boundary see exactly the
        zero vectors they would at a sequence edge.
        """
        word_ids = np.asarray(word_ids)
        t_len = word_ids.shape[-1]
        if t_len > self.max_sequence_length:
            raise SequenceTooLongError(
                f"sequence of {t_len} tokens exceeds cap {self.max_sequence_length}"
            )
        if train and rng is None and (self.input_dropout > 0 or self.block_dropout > 0):
            raise UsageError("training with dropout requires an rng")

        feats = concat([embed(self.word_emb, word_ids), embed(self.shape_emb, shape_ids)])
        if train and self.input_dropout > 0:
            feats = mul(feats, dropout_mask(feats.shape, self.input_dropout, rng))
        pad = None
        if mask is not None:
            pad = np.asarray(mask, dtype=np.float64)[..., None]
            feats = mul_const(feats, pad)
        x = affine(feats, self.entry_w, self.entry_b)
        if pad is not None:
            x = mul_const(x, pad)
        if counter is not None:
            counter.add(1)

        outputs: list[Tensor] = []
        for k in range(self.n_iterations):
            x = self.block_for(k).apply(x, pad_mask=pad, counter=counter)
            if train and self.block_dropout > 0:
                x = mul(x, dropout_mask(x.shape, self.block_dropout, rng))
            outputs.append(affine(x, self.out_w, self.out_b))
        if counter is not None:
            counter.add(1)
        return outputs
