"""Flat key = value training configuration.

One assignment per line, '#' starts a comment; every run echoes the fully
resolved config (all fields, sorted) so results can be reproduced exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .tensor import UsageError


@dataclass
class TrainConfig:
    encoder: str = "idcnn"            # idcnn | bilstm
    mode: str = "greedy-iterated"     # greedy | greedy-iterated | crf
    loss_blocks: str = "auto"         # all | last | auto
    share_blocks: bool = True
    hidden: int = 300                 # block width h
    conv_layers: int = 4              # layers per block (L_c)
    iterations: int = 1               # block applications (L_b)
    radius: int = 1
    dilation_schedule: str = "doubling"   # doubling | constant | ones
    extra_final_dilation1: bool = False   # append one more dilation-1 layer
    lstm_hidden: int = 200
    word_dim: int = 100
    shape_dim: int = 5
    shape_onehot: bool = False
    input_dropout: float = 0.0
    block_dropout: float = 0.0
    word_dropout: float = 0.0
    el_weight: float = 0.0            # expectation-linear dropout penalty
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    context: str = "sentence"         # sentence | document
    crf_boundary_scores: bool = True
    crf_constrain_bilou: bool = False
    max_sequence_length: int = 8192
    warm_start: str = ""              # checkpoint to initialize from

    def resolved_loss_blocks(self) -> str:
        if self.loss_blocks != "auto":
            return self.loss_blocks
        return "all" if self.mode == "greedy-iterated" else "last"

    def validate(self) -> "TrainConfig":
        choices = {
            "encoder": ("idcnn", "bilstm"),
            "mode": ("greedy", "greedy-iterated", "crf"),
            "loss_blocks": ("all", "last", "auto"),
            "dilation_schedule": ("doubling", "constant", "ones"),
            "context": ("sentence", "document"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise UsageError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.mode == "crf" and self.loss_blocks == "all":
            raise UsageError("mode=crf forbids loss_blocks=all: the CRF loss "
                             "attaches to the final block's scores only")
        for name in ("input_dropout", "block_dropout", "word_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise UsageError(f"{name} must be in [0, 1), got {rate}")
        if self.el_weight < 0:
            raise UsageError(f"el_weight must be >= 0, got {self.el_weight}")
        for name in ("hidden", "conv_layers", "iterations", "radius", "lstm_hidden",
                     "word_dim", "shape_dim", "epochs", "batch_size",
                     "max_sequence_length"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        return self


_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name: str, raw: str):
    typ = _FIELDS[name]
    raw = raw.strip()
    if typ == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"config key {name}: expected a boolean, got {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def parse_config(text: str) -> TrainConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return TrainConfig(**values).validate()


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in sorted(fields(TrainConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_as_dict(cfg: TrainConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}


def config_from_dict(values: dict) -> TrainConfig:
    return TrainConfig(**{k: v for k, v in values.items() if k in _FIELDS})
