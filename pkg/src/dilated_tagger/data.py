"""CoNLL ingestion, preprocessing, vocabularies, BILOU labels, batching.

File conventions: whitespace-separated columns, token in column 0 and the
tag in the last column, blank line between sentences, a line starting with
``-DOCSTART-`` between documents. Pretrained embedding files hold one
``word v1 v2 ... vk`` line per word with constant k.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from .tensor import UsageError


class ConllParseError(ValueError):
    """Malformed CoNLL input; the message carries the offending line number."""


PAD_WORD = "<pad>"
UNK_WORD = "<unk>"
PAD_ID = 0
UNK_ID = 1

_DIGITS = re.compile(r"[0-9]")

SHAPE_ALL_UPPER = 0
SHAPE_NO_UPPER = 1
SHAPE_FIRST_UPPER = 2
SHAPE_HAS_UPPER = 3
SHAPE_NO_LETTER = 4
NUM_SHAPES = 5


@dataclass(frozen=True)
class Token:
    surface: str
    normalized: str
    word_id: int
    shape_class: int
    label_id: int | None = None


@dataclass(frozen=True)
class TaggedSequence:
    tokens: tuple[Token, ...]
    kind: str  # "sentence" | "document"
    doc_id: int

    def __len__(self) -> int:
        return len(self.tokens)


def normalize_digits(surface: str) -> str:
    return _DIGITS.sub("0", surface)


def shape_class(surface: str) -> int:
    """Capitalization class of a token, total over all strings.

    0 all letters uppercase, 1 letters but none uppercase, 2 first char
    uppercase (not class 0), 3 some uppercase letter elsewhere, 4 no
    alphabetic characters at all.
    """
    letters = [c for c in surface if c.isalpha()]
    if not letters:
        return SHAPE_NO_LETTER
    if all(c.isupper() for c in letters):
        return SHAPE_ALL_UPPER
    if not any(c.isupper() for c in letters):
        return SHAPE_NO_UPPER
    if surface[0].isupper():
        return SHAPE_FIRST_UPPER
    return SHAPE_HAS_UPPER


# ---------------------------------------------------------------------------
# CoNLL reading
# ---------------------------------------------------------------------------

def read_conll(path) -> list[tuple[int, list[list[tuple[str, str | None]]]]]:
    """Parse a CoNLL file into [(doc_id, [sentence, ...]), ...].

    A sentence is a list of (surface, label) pairs; label is None when the
    file has a single column. -DOCSTART- lines open a new document and are
    not emitted as tokens.
    """
    docs: list[tuple[int, list[list[tuple[str, str | None]]]]] = []
    sentences: list[list[tuple[str, str | None]]] = []
    current: list[tuple[str, str | None]] = []
    ncols: int | None = None
    started = False  # saw any content for the current document
    doc_id = 0

    def flush_sentence():
        nonlocal current, ncols
        if current:
            sentences.append(current)
        current = []
        ncols = None

    def flush_document():
        nonlocal sentences, doc_id, started
        flush_sentence()
        if started:
            docs.append((doc_id, sentences))
            doc_id += 1
        sentences = []
        started = False

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush_sentence()
                continue
            if line.split()[0] == "-DOCSTART-":
                flush_document()
                started = True
                continue
            cols = line.split()
            if ncols is None:
                ncols = len(cols)
            elif len(cols) != ncols:
                raise ConllParseError(
                    f"{path}:{lineno}: {len(cols)} columns where the sentence has {ncols}"
                )
            label = cols[-1] if len(cols) >= 2 else None
            current.append((cols[0], label))
            started = True
    flush_document()
    return docs


# ---------------------------------------------------------------------------
# IOB -> BILOU
# ---------------------------------------------------------------------------

def _split_tag(label: str) -> tuple[str, str | None]:
    if label == "O":
        return "O", None
    prefix, _, typ = label.partition("-")
    return prefix, typ


def iob_to_bilou(labels: list[str]) -> list[str]:
    """Rewrite IOB (IOB1 tolerated: I- may open a segment) as BILOU.

    Singletons become U-X, longer segments B-X I-X... L-X; the segment set
    is preserved exactly.
    """
    n = len(labels)
    out = list(labels)
    for i, label in enumerate(labels):
        prefix, typ = _split_tag(label)
        if prefix == "O":
            continue
        prev_prefix, prev_typ = _split_tag(labels[i - 1]) if i > 0 else ("O", None)
        next_prefix, next_typ = _split_tag(labels[i + 1]) if i < n - 1 else ("O", None)
        starts = prefix == "B" or prev_prefix == "O" or prev_typ != typ
        ends = next_prefix != "I" or next_typ != typ
        if starts and ends:
            out[i] = f"U-{typ}"
        elif starts:
            out[i] = f"B-{typ}"
        elif ends:
            out[i] = f"L-{typ}"
        else:
            out[i] = f"I-{typ}"
    return out


# ---------------------------------------------------------------------------
# vocabulary and label scheme
# ---------------------------------------------------------------------------

class Vocabulary:
    """Case-sensitive word<->id map with reserved PAD and UNK entries."""

    def __init__(self, words: list[str]):
        self._words = [PAD_WORD, UNK_WORD] + list(words)
        self._ids = {w: i for i, w in enumerate(self._words)}
        if len(self._ids) != len(self._words):
            raise UsageError("vocabulary words must be unique")

    @classmethod
    def build(cls, words) -> "Vocabulary":
        uniq = sorted(set(words) - {PAD_WORD, UNK_WORD})
        return cls(uniq)

    def __len__(self) -> int:
        return len(self._words)

    def id_of(self, word: str) -> int:
        return self._ids.get(word, UNK_ID)

    def word_of(self, idx: int) -> str:
        return self._words[idx]

    @property
    def words(self) -> list[str]:
        return list(self._words)

    @property
    def content_words(self) -> list[str]:
        return self._words[2:]


class LabelScheme:
    """BILOU label strings for a fixed entity type set, O mapped to id 0."""

    def __init__(self, types):
        self.types = sorted(set(types))
        self.labels = ["O"]
        for typ in self.types:
            for prefix in ("B", "I", "L", "U"):
                self.labels.append(f"{prefix}-{typ}")
        self._ids = {lab: i for i, lab in enumerate(self.labels)}

    @classmethod
    def from_labels(cls, labels) -> "LabelScheme":
        types = set()
        for lab in labels:
            if lab != "O":
                types.add(lab.split("-", 1)[1])
        return cls(types)

    def __len__(self) -> int:
        return len(self.labels)

    def id_of(self, label: str) -> int:
        if label not in self._ids:
            raise UsageError(f"label {label!r} not in scheme (types {self.types})")
        return self._ids[label]

    def label_of(self, idx: int) -> str:
        return self.labels[idx]

    @property
    def outside_id(self) -> int:
        return 0


# ---------------------------------------------------------------------------
# sequence construction
# ---------------------------------------------------------------------------

def _make_token(surface: str, label: str | None, vocab: Vocabulary,
                scheme: LabelScheme | None) -> Token:
    normalized = normalize_digits(surface)
    label_id = None
    if label is not None and scheme is not None:
        label_id = scheme.id_of(label)
    return Token(
        surface=surface,
        normalized=normalized,
        word_id=vocab.id_of(normalized),
        shape_class=shape_class(surface),
        label_id=label_id,
    )


def build_sequences(docs, vocab: Vocabulary, scheme: LabelScheme | None,
                    context: str = "sentence",
                    convert_iob: bool | None = None) -> list[TaggedSequence]:
    """Turn parsed documents into id-resolved sequences.

    context="sentence" yields one sequence per sentence; "document"
    concatenates each document's sentences in corpus order. convert_iob=None
    auto-detects the boundary encoding over the whole corpus.
    """
    if context not in ("sentence", "document"):
        raise UsageError(f"unknown context {context!r}")
    if convert_iob is None:
        convert_iob = looks_like_iob(collect_label_strings(docs))
    seqs: list[TaggedSequence] = []
    for doc_id, sentences in docs:
        doc_tokens: list[Token] = []
        for sent in sentences:
            labels = [lab for _, lab in sent]
            if convert_iob and scheme is not None and any(l is not None for l in labels):
                labels = iob_to_bilou([l if l is not None else "O" for l in labels])
            tokens = [
                _make_token(surface, lab, vocab, scheme)
                for (surface, _), lab in zip(sent, labels)
            ]
            if context == "sentence":
                if tokens:
                    seqs.append(TaggedSequence(tuple(tokens), "sentence", doc_id))
            else:
                doc_tokens.extend(tokens)
        if context == "document" and doc_tokens:
            seqs.append(TaggedSequence(tuple(doc_tokens), "document", doc_id))
    return seqs


def looks_like_iob(labels) -> bool:
    """True when the labels use IOB prefixes only (no L-/U- anywhere)."""
    saw_entity = False
    for lab in labels:
        prefix, _ = _split_tag(lab)
        if prefix in ("L", "U"):
            return False
        if prefix in ("B", "I"):
            saw_entity = True
    return saw_entity


def maybe_iob_to_bilou(labels: list[str]) -> list[str]:
    return iob_to_bilou(labels) if looks_like_iob(labels) else list(labels)


def collect_label_strings(docs) -> list[str]:
    out = []
    for _, sentences in docs:
        for sent in sentences:
            for _, lab in sent:
                if lab is not None:
                    out.append(lab)
    return out


def collect_normalized_words(docs) -> list[str]:
    out = []
    for _, sentences in docs:
        for sent in sentences:
            for surface, _ in sent:
                out.append(normalize_digits(surface))
    return out


# ---------------------------------------------------------------------------
# word dropout
# ---------------------------------------------------------------------------

def apply_word_dropout(seq: TaggedSequence, rate: float, rng,
                       unk_id: int = UNK_ID) -> TaggedSequence:
    """Replace each word id by UNK independently with probability rate."""
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"word dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return seq
    draws = rng.random(len(seq.tokens))
    tokens = tuple(
        replace(tok, word_id=unk_id) if draw < rate else tok
        for tok, draw in zip(seq.tokens, draws)
    )
    return TaggedSequence(tokens, seq.kind, seq.doc_id)


def dropout_word_ids(word_ids: np.ndarray, rate: float, rng,
                     mask: np.ndarray | None = None,
                     unk_id: int = UNK_ID) -> np.ndarray:
    """Batched word dropout over an id matrix; pad positions untouched."""
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"word dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return word_ids
    drop = rng.random(word_ids.shape) < rate
    if mask is not None:
        drop &= mask
    return np.where(drop, unk_id, word_ids)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    word_ids: np.ndarray   # (B, T) int64
    shape_ids: np.ndarray  # (B, T) int64
    label_ids: np.ndarray  # (B, T) int64, 0 at pads and unlabeled inputs
    mask: np.ndarray       # (B, T) bool, True at real tokens
    sequences: list[TaggedSequence]
    order: list[int]       # positions of the sequences in the input list

    @property
    def n_tokens(self) -> int:
        return int(self.mask.sum())


def make_batches(seqs: list[TaggedSequence], batch_size: int,
                 pad_id: int = PAD_ID) -> list[Batch]:
    """Group sequences into right-padded batches with masks.

    Sequences are sorted by length first so each batch pads as little as
    possible; losses and F1 must ignore masked positions.
    """
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    order = sorted(range(len(seqs)), key=lambda i: (len(seqs[i]), i))
    batches: list[Batch] = []
    for lo in range(0, len(order), batch_size):
        idx = order[lo:lo + batch_size]
        group = [seqs[i] for i in idx]
        width = max(len(s) for s in group)
        b = len(group)
        word_ids = np.full((b, width), pad_id, dtype=np.int64)
        shape_ids = np.zeros((b, width), dtype=np.int64)
        label_ids = np.zeros((b, width), dtype=np.int64)
        mask = np.zeros((b, width), dtype=bool)
        for row, seq in enumerate(group):
            n = len(seq)
            word_ids[row, :n] = [t.word_id for t in seq.tokens]
            shape_ids[row, :n] = [t.shape_class for t in seq.tokens]
            label_ids[row, :n] = [
                t.label_id if t.label_id is not None else 0 for t in seq.tokens
            ]
            mask[row, :n] = True
        batches.append(Batch(word_ids, shape_ids, label_ids, mask, group, idx))
    return batches


# ---------------------------------------------------------------------------
# pretrained embeddings
# ---------------------------------------------------------------------------

def load_embeddings(path) -> tuple[list[str], np.ndarray]:
    """Read a "word v1 ... vk" text file; k must be constant."""
    words: list[str] = []
    vectors: list[list[float]] = []
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip("\n").split()
            if not parts:
                continue
            if dim is None:
                dim = len(parts) - 1
                if dim < 1:
                    raise ConllParseError(f"{path}:{lineno}: no vector components")
            elif len(parts) - 1 != dim:
                raise ConllParseError(
                    f"{path}:{lineno}: expected {dim} components, got {len(parts) - 1}"
                )
            words.append(parts[0])
            vectors.append([float(v) for v in parts[1:]])
    if dim is None:
        return [], np.zeros((0, 0))
    return words, np.asarray(vectors, dtype=np.float64)
