"""Sequence labeling with iterated dilated convolutions.

A small, self-contained engine: float64 tensors with tape autodiff, a
dilated-convolution token encoder with shared iterated blocks, a Bi-LSTM
baseline, greedy and linear-chain-CRF decoding, the full training recipe
(Adam with global-norm clipping, identity/Xavier init, word dropout,
expectation-linear dropout regularization), segment-level micro-F1, and a
throughput benchmark with sequential critical-path accounting.
"""

from .bilstm import BiLstmEncoder, LstmDirection, lstm_scan, lstm_step
from .config import TrainConfig, load_config, parse_config
from .crf import CrfParams, TagPath, crf_nll, log_partition, path_score, viterbi
from .data import (
    LabelScheme,
    TaggedSequence,
    Token,
    Vocabulary,
    apply_word_dropout,
    iob_to_bilou,
    make_batches,
    read_conll,
    shape_class,
)
from .encoder import (
    Block,
    DilatedConvLayer,
    IdCnnEncoder,
    conv_stack_receptive_field,
    receptive_field,
)
from .evaluation import Segment, extract_segments, micro_f1
from .model import TaggerModel, load_model, save_model
from .tensor import Adam, AdamState, Tensor, adam_step, dropout_mask, no_grad
from .training import (
    el_dropout_penalty,
    init_identity_dilated,
    loss_independent,
    loss_iterated,
    train,
)

__version__ = "0.1.0"
