"""Trained tagger bundle and its on-disk format.

A model is the encoder parameters, optional CRF parameters, vocabulary,
label scheme, and the resolved config it was trained with. Files are a
versioned binary blob: magic, a sorted-keys JSON header, then each array
as raw little-endian float64 in header order. Writing the same model twice
produces identical bytes, and load(save(m)) is bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .bilstm import BiLstmEncoder, LstmDirection
from .config import TrainConfig, config_as_dict, config_from_dict
from .crf import CrfParams, bilou_constraint_masks, decode, viterbi
from .data import Batch, LabelScheme, TaggedSequence, Vocabulary, make_batches
from .encoder import Block, DilatedConvLayer, IdCnnEncoder
from .tensor import Tensor, UsageError, no_grad, parameter

MAGIC = b"DTAG0001"


@dataclass
class TaggerModel:
    encoder: IdCnnEncoder | BiLstmEncoder
    crf: CrfParams | None
    vocab: Vocabulary
    scheme: LabelScheme
    config: TrainConfig

    def parameters(self) -> list[Tensor]:
        params = self.encoder.parameters()
        if self.crf is not None:
            params = params + self.crf.parameters()
        return params

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    @property
    def uses_crf(self) -> bool:
        return self.crf is not None

    def predict_batch(self, batch: Batch, counter=None) -> list[list[int]]:
        """Label ids for each sequence in the batch, pads stripped."""
        with no_grad():
            logits = self.encoder.encode(
                batch.word_ids, batch.shape_ids, mask=batch.mask, counter=counter
            )[-1].data
        out = []
        constraint = (
            bilou_constraint_masks(self.scheme)
            if self.config.crf_constrain_bilou and self.uses_crf
            else None
        )
        for row, seq in enumerate(batch.sequences):
            n = len(seq)
            row_logits = logits[row, :n]
            if self.uses_crf:
                path = decode(row_logits, self.crf, constraint)
                if counter is not None:
                    counter.add(n * len(self.scheme) ** 2)
                out.append(path.labels)
            else:
                # position-parallel argmax adds no sequential steps
                out.append([int(i) for i in row_logits.argmax(axis=-1)])
        return out

    def tag(self, seqs: list[TaggedSequence], batch_size: int = 32,
            counter=None) -> list[list[int]]:
        """Label ids per sequence, in the order the sequences were given."""
        results: list[list[int] | None] = [None] * len(seqs)
        for batch in make_batches(seqs, batch_size):
            for pos, labels in zip(batch.order, self.predict_batch(batch, counter)):
                results[pos] = labels
        return results  # type: ignore[return-value]

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, snap: list[np.ndarray]) -> None:
        for p, arr in zip(self.parameters(), snap):
            p.data[...] = arr


# ---------------------------------------------------------------------------
# named parameter arrays
# ---------------------------------------------------------------------------

def _idcnn_arrays(enc: IdCnnEncoder) -> list[tuple[str, Tensor]]:
    out = [
        ("word_emb", enc.word_emb),
        ("shape_emb", enc.shape_emb),
        ("entry_w", enc.entry_w),
        ("entry_b", enc.entry_b),
    ]
    for bi, block in enumerate(enc.blocks):
        for li, layer in enumerate(block.layers):
            out.append((f"block{bi}.layer{li}.w", layer.weight))
            out.append((f"block{bi}.layer{li}.b", layer.bias))
    out.append(("out_w", enc.out_w))
    out.append(("out_b", enc.out_b))
    return out


def _bilstm_arrays(enc: BiLstmEncoder) -> list[tuple[str, Tensor]]:
    out = [("word_emb", enc.word_emb), ("shape_emb", enc.shape_emb)]
    for name, direction in (("fwd", enc.fwd), ("bwd", enc.bwd)):
        out.append((f"{name}.w", direction.w))
        out.append((f"{name}.u", direction.u))
        out.append((f"{name}.b", direction.b))
    out.append(("out_w", enc.out_w))
    out.append(("out_b", enc.out_b))
    return out


def model_arrays(model: TaggerModel) -> list[tuple[str, Tensor]]:
    if model.encoder.kind == "idcnn":
        out = _idcnn_arrays(model.encoder)
    else:
        out = _bilstm_arrays(model.encoder)
    if model.crf is not None:
        out.append(("crf.transitions", model.crf.transitions))
        if model.crf.start is not None:
            out.append(("crf.start", model.crf.start))
        if model.crf.end is not None:
            out.append(("crf.end", model.crf.end))
    return out


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------

def save_model(model: TaggerModel, path) -> None:
    arrays = model_arrays(model)
    header = {
        "format_version": 1,
        "encoder": model.encoder.kind,
        "config": config_as_dict(model.config),
        "vocab": model.vocab.content_words,
        "types": model.scheme.types,
        "arrays": [
            {"name": name, "shape": list(t.shape)} for name, t in arrays
        ],
    }
    if model.encoder.kind == "idcnn":
        header["block_dilations"] = [b.dilations for b in model.encoder.blocks]
    blob = json.dumps(header, sort_keys=True, ensure_ascii=True).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in arrays:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_model(path) -> TaggerModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise UsageError(f"{path}: not a tagger model file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("ascii"))
        if header.get("format_version") != 1:
            raise UsageError(f"{path}: unsupported format version")
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    cfg = config_from_dict(header["config"])
    vocab = Vocabulary(header["vocab"])
    scheme = LabelScheme(header["types"])

    def p(name: str) -> Tensor:
        return parameter(arrays[name])

    if header["encoder"] == "idcnn":
        blocks = []
        for bi, dilations in enumerate(header["block_dilations"]):
            layers = [
                DilatedConvLayer(
                    p(f"block{bi}.layer{li}.w"), p(f"block{bi}.layer{li}.b"),
                    radius=cfg.radius, dilation=d,
                )
                for li, d in enumerate(dilations)
            ]
            blocks.append(Block(layers))
        encoder = IdCnnEncoder(
            word_emb=p("word_emb"), shape_emb=p("shape_emb"),
            entry_w=p("entry_w"), entry_b=p("entry_b"),
            blocks=blocks, out_w=p("out_w"), out_b=p("out_b"),
            n_iterations=cfg.iterations, share_blocks=cfg.share_blocks,
            input_dropout=cfg.input_dropout, block_dropout=cfg.block_dropout,
            max_sequence_length=cfg.max_sequence_length,
        )
    else:
        encoder = BiLstmEncoder(
            word_emb=p("word_emb"), shape_emb=p("shape_emb"),
            fwd=LstmDirection(p("fwd.w"), p("fwd.u"), p("fwd.b")),
            bwd=LstmDirection(p("bwd.w"), p("bwd.u"), p("bwd.b")),
            out_w=p("out_w"), out_b=p("out_b"),
            input_dropout=cfg.input_dropout,
            max_sequence_length=cfg.max_sequence_length,
        )

    crf = None
    if "crf.transitions" in arrays:
        crf = CrfParams(
            p("crf.transitions"),
            p("crf.start") if "crf.start" in arrays else None,
            p("crf.end") if "crf.end" in arrays else None,
        )
    return TaggerModel(encoder, crf, vocab, scheme, cfg)
