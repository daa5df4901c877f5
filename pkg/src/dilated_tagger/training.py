"""Training objectives, regularizers, initialization, and the train loop.

Two token-level objectives: plain mean NLL on the final block's scores,
and the iterated variant that averages that loss over every block
application so each pass is rewarded for labeling correctly. The CRF mode
trains the chain likelihood on the final scores. Dropout can additionally
be regularized by penalizing the squared distance between the sampled
predictor and the deterministic one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bilstm import BiLstmEncoder, LstmDirection
from .config import TrainConfig
from .crf import CrfParams, crf_nll
from .data import (
    Batch,
    LabelScheme,
    NUM_SHAPES,
    TaggedSequence,
    Vocabulary,
    dropout_word_ids,
    make_batches,
)
from .encoder import Block, DilatedConvLayer, IdCnnEncoder
from .evaluation import extract_segments, micro_f1, token_accuracy
from .model import TaggerModel, load_model
from .tensor import (
    Adam,
    Tensor,
    UsageError,
    log_softmax,
    masked_mean,
    mul,
    scale,
    softmax,
    sum_last,
    take_index_last,
)


class DivergenceError(RuntimeError):
    """Training loss went non-finite; the model holds the last good state."""


class InitError(ValueError):
    """Initialization scheme incompatible with the layer it was given."""


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_independent(logits: Tensor, gold: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean NLL of the gold label per real token under per-token softmax."""
    gold = np.asarray(gold)
    mask = np.asarray(mask, dtype=bool)
    if int(mask.sum()) == 0:
        raise UsageError("loss over an all-masked batch is undefined")
    safe_gold = np.where(mask, gold, 0)
    log_probs = take_index_last(log_softmax(logits), safe_gold)
    return scale(masked_mean(log_probs, mask), -1.0)


def loss_iterated(block_logits: list[Tensor], gold: np.ndarray, mask: np.ndarray,
                  loss_blocks: str = "all") -> Tensor:
    """Average of the independent loss over block applications.

    loss_blocks="last" keeps only the final application's loss (the 1-loss
    baseline); with a single block both reduce to loss_independent.
    """
    if not block_logits:
        raise UsageError("loss_iterated needs at least one block output")
    if loss_blocks == "last":
        return loss_independent(block_logits[-1], gold, mask)
    total = loss_independent(block_logits[0], gold, mask)
    for logits in block_logits[1:]:
        total = total + loss_independent(logits, gold, mask)
    return scale(total, 1.0 / len(block_logits))


def el_distance(sampled_logits: Tensor, det_logits: Tensor,
                mask: np.ndarray) -> Tensor:
    """Mean over real tokens of ||softmax(sampled) - softmax(det)||^2."""
    diff = softmax(sampled_logits) - softmax(det_logits)
    per_token = sum_last(mul(diff, diff))
    return masked_mean(per_token, np.asarray(mask, dtype=bool))


def el_dropout_penalty(encoder, word_ids, shape_ids, mask, rng,
                       weight: float) -> Tensor:
    """Run the encoder with one sampled dropout mask and once
    deterministically; penalize the distance between the two final-block
    prediction distributions. Gradients flow through both passes."""
    sampled = encoder.encode(word_ids, shape_ids, mask=mask, train=True, rng=rng)[-1]
    det = encoder.encode(word_ids, shape_ids, mask=mask, train=False)[-1]
    return scale(el_distance(sampled, det, mask), weight)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def xavier_normal(rng, shape) -> np.ndarray:
    fan_in = shape[-1] if len(shape) > 1 else shape[0]
    fan_out = shape[0]
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


def init_identity_dilated(layer: DilatedConvLayer) -> None:
    """Central window slice = identity, flanks and bias = 0.

    The layer then maps any non-negative input sequence to itself (modulo
    the later ReLU); requires equal input and output widths.
    """
    if layer.h_in != layer.h_out:
        raise InitError(
            f"identity init needs square filters, got {layer.h_in} -> {layer.h_out}"
        )
    h = layer.h_in
    w = np.zeros_like(layer.weight.data)
    w[:, layer.radius * h:(layer.radius + 1) * h] = np.eye(h)
    layer.weight.data[...] = w
    layer.bias.data[...] = 0.0


def build_idcnn(cfg: TrainConfig, vocab: Vocabulary, scheme: LabelScheme, rng,
                pretrained: tuple[list[str], np.ndarray] | None = None) -> IdCnnEncoder:
    from .tensor import parameter

    word_emb = parameter(xavier_normal(rng, (len(vocab), cfg.word_dim)))
    if pretrained is not None:
        words, vectors = pretrained
        if vectors.size and vectors.shape[1] != cfg.word_dim:
            raise UsageError(
                f"embedding file has dim {vectors.shape[1]}, config says {cfg.word_dim}"
            )
        for word, vec in zip(words, vectors):
            idx = vocab.id_of(word)
            if idx > 1:  # leave PAD/UNK at their random init
                word_emb.data[idx] = vec
    if cfg.shape_onehot:
        if cfg.shape_dim != NUM_SHAPES:
            raise UsageError("shape_onehot requires shape_dim = 5")
        shape_emb = parameter(np.eye(NUM_SHAPES))
    else:
        shape_emb = parameter(xavier_normal(rng, (NUM_SHAPES, cfg.shape_dim)))

    feat_dim = cfg.word_dim + cfg.shape_dim
    entry_w = parameter(xavier_normal(rng, (cfg.hidden, feat_dim)))
    entry_b = parameter(np.zeros(cfg.hidden))

    n_blocks = 1 if cfg.share_blocks else cfg.iterations
    blocks = []
    for _ in range(n_blocks):
        block = Block.create(cfg.hidden, cfg.conv_layers, cfg.radius,
                             schedule=cfg.dilation_schedule,
                             extra_final_dilation1=cfg.extra_final_dilation1)
        for layer in block.layers:
            init_identity_dilated(layer)
        blocks.append(block)

    out_w = parameter(xavier_normal(rng, (len(scheme), cfg.hidden)))
    out_b = parameter(np.zeros(len(scheme)))
    return IdCnnEncoder(
        word_emb=word_emb, shape_emb=shape_emb, entry_w=entry_w, entry_b=entry_b,
        blocks=blocks, out_w=out_w, out_b=out_b,
        n_iterations=cfg.iterations, share_blocks=cfg.share_blocks,
        input_dropout=cfg.input_dropout, block_dropout=cfg.block_dropout,
        max_sequence_length=cfg.max_sequence_length,
    )


def build_bilstm(cfg: TrainConfig, vocab: Vocabulary, scheme: LabelScheme, rng,
                 pretrained: tuple[list[str], np.ndarray] | None = None) -> BiLstmEncoder:
    from .tensor import parameter

    word_emb = parameter(xavier_normal(rng, (len(vocab), cfg.word_dim)))
    if pretrained is not None:
        words, vectors = pretrained
        for word, vec in zip(words, vectors):
            idx = vocab.id_of(word)
            if idx > 1:
                word_emb.data[idx] = vec
    shape_emb = parameter(xavier_normal(rng, (NUM_SHAPES, cfg.shape_dim)))
    feat_dim = cfg.word_dim + cfg.shape_dim
    h = cfg.lstm_hidden

    def direction() -> LstmDirection:
        d = LstmDirection.create(feat_dim, h)
        d.w.data[...] = xavier_normal(rng, d.w.shape)
        d.u.data[...] = xavier_normal(rng, d.u.shape)
        d.b.data[h:2 * h] = 1.0  # forget-gate bias, for stable early training
        return d

    fwd, bwd = direction(), direction()
    out_w = parameter(xavier_normal(rng, (len(scheme), 2 * h)))
    out_b = parameter(np.zeros(len(scheme)))
    return BiLstmEncoder(
        word_emb=word_emb, shape_emb=shape_emb, fwd=fwd, bwd=bwd,
        out_w=out_w, out_b=out_b, input_dropout=cfg.input_dropout,
        max_sequence_length=cfg.max_sequence_length,
    )


def build_model(cfg: TrainConfig, vocab: Vocabulary, scheme: LabelScheme, rng,
                pretrained=None) -> TaggerModel:
    cfg.validate()
    if cfg.warm_start:
        warm = load_model(cfg.warm_start)
        encoder = warm.encoder
        encoder.max_sequence_length = cfg.max_sequence_length
        crf = warm.crf
        if cfg.mode == "crf" and crf is None:
            crf = CrfParams.zeros(len(warm.scheme), boundary=cfg.crf_boundary_scores)
        return TaggerModel(encoder, crf if cfg.mode == "crf" else None,
                           warm.vocab, warm.scheme, cfg)
    if cfg.encoder == "idcnn":
        encoder = build_idcnn(cfg, vocab, scheme, rng, pretrained)
    else:
        encoder = build_bilstm(cfg, vocab, scheme, rng, pretrained)
    crf = (
        CrfParams.zeros(len(scheme), boundary=cfg.crf_boundary_scores)
        if cfg.mode == "crf"
        else None
    )
    return TaggerModel(encoder, crf, vocab, scheme, cfg)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: TaggerModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_f1: float = 0.0


def batch_loss(model: TaggerModel, batch: Batch, cfg: TrainConfig, rng) -> Tensor:
    """Total training loss for one batch (base objective + EL penalty)."""
    word_ids = dropout_word_ids(batch.word_ids, cfg.word_dropout, rng, mask=batch.mask)
    block_logits = model.encoder.encode(
        word_ids, batch.shape_ids, mask=batch.mask, train=True, rng=rng
    )
    if cfg.mode == "crf":
        total = None
        final = block_logits[-1]
        for row, seq in enumerate(batch.sequences):
            n = len(seq)
            row_logits = _row_slice(final, row, n)
            nll = crf_nll(row_logits, model.crf, batch.label_ids[row, :n])
            total = nll if total is None else total + nll
        loss = scale(total, 1.0 / batch.n_tokens)
    elif cfg.mode == "greedy":
        loss = loss_independent(block_logits[-1], batch.label_ids, batch.mask)
    else:
        loss = loss_iterated(block_logits, batch.label_ids, batch.mask,
                             cfg.resolved_loss_blocks())
    if cfg.el_weight > 0:
        det = model.encoder.encode(word_ids, batch.shape_ids, mask=batch.mask,
                                   train=False)[-1]
        penalty = scale(el_distance(block_logits[-1], det, batch.mask), cfg.el_weight)
        loss = loss + penalty
    return loss


def _row_slice(x: Tensor, row: int, n: int) -> Tensor:
    from .tensor import accumulate_grad, make_op

    out = x.data[row, :n].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[row, :n] = g
        accumulate_grad(x, gx)

    return make_op(out, (x,), backward)


def evaluate(model: TaggerModel, seqs: list[TaggedSequence],
             batch_size: int = 32) -> dict:
    """Dev-set segment F1 and token accuracy from the model's decoder."""
    pred_ids = model.tag(seqs, batch_size=batch_size)
    gold_ids = [[t.label_id for t in s.tokens] for s in seqs]
    gold_segs, pred_segs = [], []
    for gold, pred in zip(gold_ids, pred_ids):
        gold_segs.append(extract_segments([model.scheme.label_of(i) for i in gold]))
        pred_segs.append(extract_segments([model.scheme.label_of(i) for i in pred]))
    precision, recall, f1 = micro_f1(gold_segs, pred_segs)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "token_acc": token_accuracy(gold_ids, pred_ids),
    }


class MetricsLog:
    """Append-only epoch<TAB>split<TAB>metric<TAB>value log."""

    def __init__(self, path=None):
        self.path = path
        if path is not None:
            open(path, "w", encoding="utf-8").close()

    def write(self, epoch: int, split: str, metric: str, value: float) -> None:
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{epoch}\t{split}\t{metric}\t{value:.8f}\n")


def train(cfg: TrainConfig, train_seqs: list[TaggedSequence],
          dev_seqs: list[TaggedSequence] | None, vocab: Vocabulary,
          scheme: LabelScheme, pretrained=None, metrics_path=None,
          quiet: bool = True) -> TrainResult:
    """Run the full recipe; deterministic given cfg.seed.

    Logs train loss and dev metrics per epoch, keeps the best-dev
    checkpoint, and aborts with the last good parameters on divergence.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, vocab, scheme, rng, pretrained)
    params = model.parameters()
    optimizer = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                     eps=cfg.epsilon, clip_norm=cfg.clip_norm)
    log = MetricsLog(metrics_path)
    batches = make_batches(train_seqs, cfg.batch_size)
    result = TrainResult(model=model)
    best_snapshot = model.snapshot()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(batches))
        epoch_loss = 0.0
        n_batches = 0
        for bi in order:
            batch = batches[bi]
            if batch.n_tokens == 0:
                continue
            try:
                loss = batch_loss(model, batch, cfg, rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise FloatingPointError(f"loss became {value}")
                loss.backward()
                optimizer.step()
            except FloatingPointError as exc:
                model.restore(best_snapshot)
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            epoch_loss += value
            n_batches += 1
        mean_loss = epoch_loss / max(n_batches, 1)
        log.write(epoch, "train", "loss", mean_loss)
        entry = {"epoch": epoch, "train_loss": mean_loss}

        if dev_seqs:
            metrics = evaluate(model, dev_seqs, batch_size=cfg.batch_size)
            for name in ("f1", "token_acc", "precision", "recall"):
                log.write(epoch, "dev", name, metrics[name])
            entry.update({f"dev_{k}": v for k, v in metrics.items()})
            if metrics["f1"] > result.best_dev_f1 or result.best_epoch < 0:
                result.best_dev_f1 = metrics["f1"]
                result.best_epoch = epoch
                best_snapshot = model.snapshot()
        else:
            best_snapshot = model.snapshot()
            result.best_epoch = epoch
        result.history.append(entry)
        if not quiet:
            print(f"epoch {epoch}: " + " ".join(f"{k}={v:.4f}" for k, v in entry.items()
                                                if k != "epoch"))

    model.restore(best_snapshot)
    return result
