"""Segment extraction from BILOU labels and segment-level micro-F1."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class Segment:
    start: int  # inclusive token index
    end: int    # inclusive token index
    type: str


def extract_segments(labels: list[str]) -> set[Segment]:
    """Entity segments under the strict repair rule.

    Only maximal well-formed patterns produce segments: U-X alone, or
    B-X (I-X)* L-X with one type throughout. Ill-formed fragments from
    greedy decoding (stray I/L, type switches, unclosed B) yield nothing.
    """
    segments: set[Segment] = set()
    n = len(labels)
    i = 0
    while i < n:
        label = labels[i]
        if "-" not in label:
            i += 1
            continue
        prefix, typ = label.split("-", 1)
        if prefix == "U":
            segments.add(Segment(i, i, typ))
            i += 1
        elif prefix == "B":
            j = i + 1
            while j < n and labels[j] == f"I-{typ}":
                j += 1
            if j < n and labels[j] == f"L-{typ}":
                segments.add(Segment(i, j, typ))
                i = j + 1
            else:
                i += 1
        else:
            i += 1
    return segments


def labels_from_segments(length: int, segments) -> list[str]:
    """Render non-overlapping segments back into BILOU strings."""
    labels = ["O"] * length
    for seg in sorted(segments):
        if seg.start < 0 or seg.end >= length or seg.start > seg.end:
            raise ValueError(f"segment {seg} out of range for length {length}")
        if any(labels[t] != "O" for t in range(seg.start, seg.end + 1)):
            raise ValueError(f"segment {seg} overlaps another segment")
        if seg.start == seg.end:
            labels[seg.start] = f"U-{seg.type}"
        else:
            labels[seg.start] = f"B-{seg.type}"
            for t in range(seg.start + 1, seg.end):
                labels[t] = f"I-{seg.type}"
            labels[seg.end] = f"L-{seg.type}"
    return labels


def micro_f1(gold: list[set], pred: list[set]) -> tuple[float, float, float]:
    """Corpus-pooled precision/recall/F1 over exact (start, end, type) matches.

    Precision is 0 by convention when there are no predictions, recall 0
    when there is no gold, and F1 0 when P + R = 0.
    """
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sequences vs {len(pred)} predicted")
    tp = sum(len(g & p) for g, p in zip(gold, pred))
    n_pred = sum(len(p) for p in pred)
    n_gold = sum(len(g) for g in gold)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def token_accuracy(gold_ids, pred_ids) -> float:
    """Plain per-token accuracy over aligned id sequences."""
    correct = 0
    total = 0
    for g, p in zip(gold_ids, pred_ids):
        if len(g) != len(p):
            raise ValueError("sequence length mismatch in token_accuracy")
        correct += sum(1 for a, b in zip(g, p) if a == b)
        total += len(g)
    return correct / total if total else 0.0
