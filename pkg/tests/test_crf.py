"""CRF head: scoring, Viterbi, forward-backward, NLL. Oracles enumerate
every path outright, so sizes stay at D <= 5, T <= 8."""

import numpy as np
import pytest

from dilated_tagger.crf import (
    CrfParams,
    bilou_constraint_masks,
    crf_nll,
    decode,
    log_partition,
    path_score,
    viterbi,
)
from dilated_tagger.data import LabelScheme
from dilated_tagger.tensor import parameter

from oracles import (
    brute_force_log_partition,
    brute_force_marginals,
    brute_force_viterbi,
    numeric_grad,
    rel_error,
)


def random_instance(rng, max_d=5, max_t=8, boundary=False):
    d = int(rng.integers(2, max_d + 1))
    t = int(rng.integers(1, max_t + 1))
    logits = rng.normal(size=(t, d))
    trans = rng.normal(size=(d, d))
    start = rng.normal(size=d) if boundary else None
    end = rng.normal(size=d) if boundary else None
    return logits, trans, start, end


# ---------------------------------------------------------------------------
# path_score
# ---------------------------------------------------------------------------

def test_path_score_single_position():
    logits = np.array([[1.0, 2.0, 3.0]])
    trans = np.ones((3, 3))
    assert path_score(logits, trans, [1]) == 2.0
    assert path_score(logits, trans, [1], start=np.array([0.5, 0.5, 0.5]),
                      end=np.array([0.25, 0.25, 0.25])) == 2.75


def test_path_score_all_zero():
    logits = np.zeros((4, 3))
    trans = np.zeros((3, 3))
    for path in ([0, 1, 2, 0], [2, 2, 2, 2]):
        assert path_score(logits, trans, path) == 0.0


def test_path_score_matches_term_by_term_oracle():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 3))
    trans = rng.normal(size=(3, 3))
    path = [2, 0, 1, 1]
    want = 0.0
    for t, y in enumerate(path):
        want += logits[t, y]
    for t in range(1, 4):
        want += trans[path[t - 1], path[t]]
    assert abs(path_score(logits, trans, path) - want) < 1e-12


# ---------------------------------------------------------------------------
# viterbi
# ---------------------------------------------------------------------------

def test_viterbi_zero_transitions_is_argmax():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(6, 4))
    got = viterbi(logits, np.zeros((4, 4)))
    assert got.labels == list(logits.argmax(axis=1))


def test_viterbi_single_position():
    logits = np.array([[0.5, 2.0, -1.0]])
    got = viterbi(logits, np.zeros((3, 3)))
    assert got.labels == [1] and got.score == 2.0


def test_viterbi_matches_brute_force_enumeration():
    rng = np.random.default_rng(2)
    for case in range(200):
        boundary = case % 2 == 1
        logits, trans, start, end = random_instance(rng, boundary=boundary)
        got = viterbi(logits, trans, start, end)
        _, best_score = brute_force_viterbi(logits, trans, start, end)
        assert got.score == pytest.approx(best_score, abs=1e-9)
        assert path_score(logits, trans, got.labels, start, end) == pytest.approx(
            best_score, abs=1e-9
        )


def test_viterbi_beats_random_paths():
    rng = np.random.default_rng(3)
    logits, trans, _, _ = random_instance(rng, max_d=5, max_t=8)
    t, d = logits.shape
    best = viterbi(logits, trans).score
    for _ in range(1000):
        path = rng.integers(0, d, size=t)
        assert path_score(logits, trans, path) <= best + 1e-12


def test_viterbi_tie_break_prefers_lower_label():
    logits = np.zeros((3, 3))
    got = viterbi(logits, np.zeros((3, 3)))
    assert got.labels == [0, 0, 0]


# ---------------------------------------------------------------------------
# log_partition
# ---------------------------------------------------------------------------

def test_log_partition_uniform_counts_paths():
    log_z, unary, pairwise = log_partition(np.zeros((2, 3)), np.zeros((3, 3)))
    assert log_z == pytest.approx(2 * np.log(3.0), abs=1e-12)
    assert np.allclose(unary, 1.0 / 3.0)
    assert np.allclose(pairwise, 1.0 / 9.0)


def test_log_partition_single_label_chain():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(5, 1))
    trans = rng.normal(size=(1, 1))
    log_z, _, _ = log_partition(logits, trans)
    assert log_z == pytest.approx(logits.sum() + 4 * trans[0, 0], abs=1e-12)


def test_log_partition_matches_enumeration():
    rng = np.random.default_rng(5)
    for case in range(100):
        boundary = case % 2 == 1
        logits, trans, start, end = random_instance(rng, boundary=boundary)
        log_z, unary, pairwise = log_partition(logits, trans, start, end)
        assert log_z == pytest.approx(
            brute_force_log_partition(logits, trans, start, end), abs=1e-9
        )
        want_unary, want_pair = brute_force_marginals(logits, trans, start, end)
        assert np.max(np.abs(unary - want_unary)) < 1e-9
        if pairwise.size:
            assert np.max(np.abs(pairwise - want_pair)) < 1e-9


def test_marginals_normalize_and_marginalize():
    rng = np.random.default_rng(6)
    logits, trans, start, end = random_instance(rng, boundary=True)
    _, unary, pairwise = log_partition(logits, trans, start, end)
    assert np.allclose(unary.sum(axis=1), 1.0, atol=1e-10)
    for t in range(pairwise.shape[0]):
        assert np.allclose(pairwise[t].sum(axis=1), unary[t], atol=1e-10)
        assert np.allclose(pairwise[t].sum(axis=0), unary[t + 1], atol=1e-10)


def test_row_shift_moves_log_z_and_keeps_argmax():
    rng = np.random.default_rng(7)
    logits, trans, _, _ = random_instance(rng, max_t=6)
    shifted = logits.copy()
    shifted[2] += 3.5
    base_z, _, _ = log_partition(logits, trans)
    new_z, _, _ = log_partition(shifted, trans)
    assert new_z - base_z == pytest.approx(3.5, abs=1e-9)
    assert viterbi(logits, trans).labels == viterbi(shifted, trans).labels


# ---------------------------------------------------------------------------
# crf_nll
# ---------------------------------------------------------------------------

def test_crf_nll_saturated_logits_is_near_zero():
    gold = [0, 2, 1]
    logits = np.full((3, 3), -1e3)
    for t, y in enumerate(gold):
        logits[t, y] = 1e3
    loss = crf_nll(parameter(logits), CrfParams.zeros(3, boundary=False), gold)
    assert 0 <= loss.item() < 1e-6


def test_crf_nll_uniform():
    loss = crf_nll(parameter(np.zeros((2, 3))), CrfParams.zeros(3, boundary=False), [0, 1])
    assert loss.item() == pytest.approx(2 * np.log(3.0), abs=1e-12)


@pytest.mark.parametrize("boundary", [False, True])
def test_crf_nll_gradients_match_finite_differences(boundary):
    rng = np.random.default_rng(8)
    logits0 = rng.normal(size=(5, 4))
    trans0 = rng.normal(size=(4, 4))
    start0 = rng.normal(size=4)
    end0 = rng.normal(size=4)
    gold = rng.integers(0, 4, size=5)

    logits = parameter(logits0.copy())
    crf = CrfParams(
        parameter(trans0.copy()),
        parameter(start0.copy()) if boundary else None,
        parameter(end0.copy()) if boundary else None,
    )
    crf_nll(logits, crf, gold).backward()

    def f():
        s = start0 if boundary else None
        e = end0 if boundary else None
        log_z, _, _ = log_partition(logits0, trans0, s, e)
        return log_z - path_score(logits0, trans0, gold, s, e)

    assert rel_error(logits.grad, numeric_grad(f, logits0)) < 1e-5
    assert rel_error(crf.transitions.grad, numeric_grad(f, trans0)) < 1e-5
    if boundary:
        assert rel_error(crf.start.grad, numeric_grad(f, start0)) < 1e-5
        assert rel_error(crf.end.grad, numeric_grad(f, end0)) < 1e-5


# ---------------------------------------------------------------------------
# constrained decoding
# ---------------------------------------------------------------------------

def test_bilou_constraints_forbid_invalid_paths():
    scheme = LabelScheme(["PER"])
    crf = CrfParams.zeros(len(scheme), boundary=True)
    masks = bilou_constraint_masks(scheme)
    rng = np.random.default_rng(9)
    from dilated_tagger.evaluation import extract_segments, labels_from_segments

    for _ in range(50):
        logits = rng.normal(size=(6, len(scheme))) * 3
        path = decode(logits, crf, constraint=masks)
        labels = [scheme.label_of(i) for i in path.labels]
        # a constrained path must round-trip exactly through segments
        segs = extract_segments(labels)
        assert labels_from_segments(len(labels), segs) == labels
