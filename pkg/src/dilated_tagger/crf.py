"""Linear-chain CRF: path scoring, Viterbi, forward-backward, and NLL.

Scores live in log space throughout. The transition matrix is indexed
[previous, current] and is shared across positions and inputs; optional
start/end vectors score the boundary tags (zeros recover the plain chain).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, accumulate_grad, make_op


@dataclass
class CrfParams:
    transitions: Tensor            # (D, D), [i, j] = score of i -> j
    start: Tensor | None = None    # (D,)
    end: Tensor | None = None      # (D,)

    @classmethod
    def zeros(cls, n_labels: int, boundary: bool = True) -> "CrfParams":
        from .tensor import parameter

        trans = parameter(np.zeros((n_labels, n_labels)))
        if boundary:
            return cls(trans, parameter(np.zeros(n_labels)), parameter(np.zeros(n_labels)))
        return cls(trans)

    def parameters(self) -> list[Tensor]:
        out = [self.transitions]
        if self.start is not None:
            out.append(self.start)
        if self.end is not None:
            out.append(self.end)
        return out


@dataclass
class TagPath:
    labels: list[int]
    score: float


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    # guard all -inf columns (can occur under constraint masks)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.exp(a - m).sum(axis=axis))


def path_score(logits: np.ndarray, transitions: np.ndarray, path,
               start: np.ndarray | None = None,
               end: np.ndarray | None = None) -> float:
    """Unnormalized log score of one tag path."""
    path = np.asarray(path)
    t_len = logits.shape[0]
    if len(path) != t_len:
        raise ValueError(f"path length {len(path)} != sequence length {t_len}")
    score = float(logits[np.arange(t_len), path].sum())
    if t_len > 1:
        score += float(transitions[path[:-1], path[1:]].sum())
    if start is not None:
        score += float(start[path[0]])
    if end is not None:
        score += float(end[path[-1]])
    return score


def viterbi(logits: np.ndarray, transitions: np.ndarray,
            start: np.ndarray | None = None,
            end: np.ndarray | None = None) -> TagPath:
    """Exact max-scoring path in O(D^2 T); argmax ties go to the lower id."""
    t_len, d = logits.shape
    best = logits[0].astype(np.float64).copy()
    if start is not None:
        best = best + start
    back = np.zeros((t_len, d), dtype=np.int64)
    for t in range(1, t_len):
        # cand[i, j] = best[i] + transitions[i, j]
        cand = best[:, None] + transitions
        back[t] = cand.argmax(axis=0)
        best = cand[back[t], np.arange(d)] + logits[t]
    if end is not None:
        best = best + end
    last = int(best.argmax())
    path = [last]
    for t in range(t_len - 1, 0, -1):
        last = int(back[t, last])
        path.append(last)
    path.reverse()
    return TagPath(path, float(best[path[-1]]))


def log_partition(logits: np.ndarray, transitions: np.ndarray,
                  start: np.ndarray | None = None,
                  end: np.ndarray | None = None
                  ) -> tuple[float, np.ndarray, np.ndarray]:
    """Forward-backward pass.

    Returns (log Z, unary marginals (T, D), pairwise marginals (T-1, D, D));
    the unary marginals are exactly d(log Z)/d(logits).
    """
    t_len, d = logits.shape
    start_v = np.zeros(d) if start is None else start
    end_v = np.zeros(d) if end is None else end

    alpha = np.empty((t_len, d))
    alpha[0] = logits[0] + start_v
    for t in range(1, t_len):
        alpha[t] = logits[t] + _logsumexp(alpha[t - 1][:, None] + transitions, axis=0)

    beta = np.empty((t_len, d))
    beta[t_len - 1] = end_v
    for t in range(t_len - 2, -1, -1):
        beta[t] = _logsumexp(transitions + (logits[t + 1] + beta[t + 1])[None, :], axis=1)

    log_z = float(_logsumexp(alpha[t_len - 1] + end_v, axis=0))
    unary = np.exp(alpha + beta - log_z)
    pairwise = np.empty((max(t_len - 1, 0), d, d))
    for t in range(t_len - 1):
        pairwise[t] = np.exp(
            alpha[t][:, None] + transitions
            + (logits[t + 1] + beta[t + 1])[None, :] - log_z
        )
    return log_z, unary, pairwise


def crf_nll(logits: Tensor, crf: CrfParams, gold) -> Tensor:
    """Negative log-likelihood of the gold path, differentiable.

    Gradients are marginals minus gold indicator counts, for the logits,
    the transition matrix, and the boundary vectors when present.
    """
    gold = np.asarray(gold)
    trans = crf.transitions
    start_arr = crf.start.data if crf.start is not None else None
    end_arr = crf.end.data if crf.end is not None else None
    log_z, unary, pairwise = log_partition(logits.data, trans.data, start_arr, end_arr)
    gold_score = path_score(logits.data, trans.data, gold, start_arr, end_arr)
    t_len, _ = logits.data.shape

    def backward(g):
        gscale = np.asarray(g).item()
        gl = unary.copy()
        gl[np.arange(t_len), gold] -= 1.0
        accumulate_grad(logits, gscale * gl)
        gt = pairwise.sum(axis=0)
        if t_len > 1:
            np.add.at(gt, (gold[:-1], gold[1:]), -1.0)
        accumulate_grad(trans, gscale * gt)
        if crf.start is not None:
            gs = unary[0].copy()
            gs[gold[0]] -= 1.0
            accumulate_grad(crf.start, gscale * gs)
        if crf.end is not None:
            ge = unary[-1].copy()
            ge[gold[-1]] -= 1.0
            accumulate_grad(crf.end, gscale * ge)

    parents = [logits] + crf.parameters()
    return make_op(np.float64(log_z - gold_score), tuple(parents), backward)


def decode(logits: np.ndarray, crf: CrfParams,
           constraint: tuple | None = None) -> TagPath:
    """Viterbi under the CRF parameters, optionally with -inf constraints."""
    trans = crf.transitions.data
    start = crf.start.data if crf.start is not None else None
    end = crf.end.data if crf.end is not None else None
    if constraint is not None:
        trans_mask, start_mask, end_mask = constraint
        trans = trans + trans_mask
        start = (start if start is not None else 0.0) + start_mask
        end = (end if end is not None else 0.0) + end_mask
    return viterbi(logits, trans, start, end)


def bilou_constraint_masks(scheme) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """0/-inf masks forbidding transitions that break BILOU well-formedness.

    Added to decoding scores when hard constraints are enabled; training is
    unaffected.
    """
    labels = scheme.labels
    d = len(labels)
    neg = -np.inf

    def split(lab):
        if lab == "O":
            return "O", None
        p, _, t = lab.partition("-")
        return p, t

    trans = np.zeros((d, d))
    start = np.zeros(d)
    end = np.zeros(d)
    for i, a in enumerate(labels):
        pa, ta = split(a)
        if pa in ("B", "I"):
            end[i] = neg  # open segment cannot end the sequence
        for j, b in enumerate(labels):
            pb, tb = split(b)
            if pb in ("I", "L"):
                # continuation must follow B/I of the same type
                if pa not in ("B", "I") or ta != tb:
                    trans[i, j] = neg
            elif pa in ("B", "I"):
                # open segment only allows its own continuation
                trans[i, j] = neg
    for j, b in enumerate(labels):
        pb, _ = split(b)
        if pb in ("I", "L"):
            start[j] = neg
    return trans, start, end
