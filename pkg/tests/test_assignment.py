import numpy as np
import pytest

from tinyground import assignment as A
from tinyground.geometry import OrientedBox

from oracles import brute_force_assignment, central_difference


def boxes(*params):
    return [OrientedBox(*p) for p in params]


# --- cost matrix ---------------------------------------------------------

def test_cost_matrix_examples():
    c = A.cost_matrix([(0, 0, 0, 0, 0)], [(1, 1, 1, 1, 1)])
    assert c.shape == (1, 1) and c[0, 0] == pytest.approx(5.0)

    same = boxes((0, 0, 10, 10, 0), (20, 20, 30, 30, 50))
    c = A.cost_matrix(same, same)
    assert np.allclose(np.diag(c), 0.0)

    c = A.cost_matrix(boxes((0, 0, 10, 10, 0)), boxes((0, 0, 10, 10, 50)))
    assert c[0, 0] == pytest.approx(2500.0)


def test_cost_matrix_rejects_empty():
    with pytest.raises(A.AssignmentError):
        A.cost_matrix([], boxes((0, 0, 1, 1, 0)))


# --- hungarian -----------------------------------------------------------

def test_hungarian_1x1():
    a = A.hungarian(np.array([[5.0]]))
    assert a.pairs == ((0, 0),) and a.total_cost == 5.0


def test_hungarian_cross_match():
    a = A.hungarian(np.array([[100.0, 0.0], [0.0, 100.0]]))
    assert a.pairs == ((0, 1), (1, 0))
    assert a.total_cost == 0.0


def test_hungarian_rejects_nan_and_inf():
    with pytest.raises(A.AssignmentError):
        A.hungarian(np.array([[np.nan]]))
    with pytest.raises(A.AssignmentError):
        A.hungarian(np.array([[np.inf, 1.0]]))


@pytest.mark.parametrize("shape", [(3, 2), (2, 3), (4, 4), (5, 3), (1, 5)])
def test_hungarian_matches_brute_force_floats(shape):
    rng = np.random.default_rng(hash(shape) % 2**32)
    for _ in range(50):
        c = rng.uniform(0, 10, shape)
        got = A.hungarian(c)
        want_cost, _ = brute_force_assignment(c)
        assert got.total_cost == pytest.approx(want_cost, abs=1e-9)
        assert len(got.pairs) == min(shape)


def test_hungarian_lexicographic_tie_break():
    # integer matrices produce exact ties; the lex-smallest optimum is pinned
    rng = np.random.default_rng(7)
    for _ in range(300):
        L, K = rng.integers(1, 5, 2)
        c = rng.integers(0, 4, (L, K)).astype(float)
        got = A.hungarian(c)
        want_cost, want_pairs = brute_force_assignment(c)
        assert got.total_cost == pytest.approx(want_cost, abs=1e-12)
        assert got.pairs == want_pairs


def test_hungarian_partial_matching_rows_exceed_cols():
    c = np.array([[1.0, 9.0], [0.5, 0.5], [9.0, 0.25]])
    a = A.hungarian(c)
    assert a.pairs == ((1, 0), (2, 1))
    assert a.total_cost == pytest.approx(0.75)


# --- grounding loss ------------------------------------------------------

def test_loss_zero_for_permuted_identical_sets():
    ref = boxes((0, 0, 10, 10, 0), (20, 20, 40, 40, 25), (5, 50, 9, 60, 80))
    pred = [ref[2], ref[0], ref[1]]
    loss, _ = A.grounding_loss(pred, ref)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_loss_unmatched_prediction_free():
    pred = [(0, 0, 0, 0, 0), (10, 10, 10, 10, 0)]
    ref = [(10, 10, 10, 10, 0)]
    loss, a = A.grounding_loss(pred, ref)
    assert loss == pytest.approx(0.0)
    assert a.pairs == ((1, 0),)


def test_loss_tie_broken_to_first_reference():
    loss, a = A.grounding_loss([(1, 1, 1, 1, 1)], [(0, 0, 0, 0, 0), (2, 2, 2, 2, 2)])
    assert loss == pytest.approx(5.0)
    assert a.pairs == ((0, 0),)


def test_loss_empty_sides():
    assert A.grounding_loss([], []) == (0.0, A.Assignment((), 0.0))
    loss, a = A.grounding_loss([], [(1, 2, 3, 4, 5)])
    assert loss == 0.0 and a.pairs == ()


def test_loss_permutation_invariance():
    rng = np.random.default_rng(11)
    for _ in range(50):
        L, K = rng.integers(1, 6, 2)
        pred = rng.uniform(0, 100, (L, 5))
        ref = rng.uniform(0, 100, (K, 5))
        base, _ = A.grounding_loss(pred, ref)
        lp, _ = A.grounding_loss(pred[rng.permutation(L)], ref)
        lr, _ = A.grounding_loss(pred, ref[rng.permutation(K)])
        assert lp == pytest.approx(base, abs=1e-9)
        assert lr == pytest.approx(base, abs=1e-9)


# --- gradient ------------------------------------------------------------

def test_grad_matched_pair():
    pred = [(1, 0, 0, 0, 0)]
    ref = [(0, 0, 0, 0, 0)]
    _, a = A.grounding_loss(pred, ref)
    g = A.grounding_loss_grad(pred, ref, a)
    assert np.allclose(g, [[2, 0, 0, 0, 0]])


def test_grad_unmatched_prediction_zero():
    pred = [(0, 0, 0, 0, 0), (50, 50, 50, 50, 50)]
    ref = [(50, 50, 50, 50, 50)]
    _, a = A.grounding_loss(pred, ref)
    g = A.grounding_loss_grad(pred, ref, a)
    assert np.allclose(g[0], 0.0) and np.allclose(g[1], 0.0)


def test_grad_matches_central_differences():
    rng = np.random.default_rng(13)
    for _ in range(20):
        L, K = rng.integers(1, 5, 2)
        pred = rng.uniform(0, 100, (L, 5))
        ref = rng.uniform(0, 100, (K, 5))
        _, a = A.grounding_loss(pred, ref)
        analytic = A.grounding_loss_grad(pred, ref, a)

        def f(flat):
            loss, _ = A.grounding_loss(flat.reshape(L, 5), ref)
            return loss

        numeric = central_difference(f, pred.ravel().copy(), step=1e-5).reshape(L, 5)
        denom = max(1.0, np.abs(numeric).max())
        assert np.abs(analytic - numeric).max() / denom < 1e-6


def test_grad_rejects_stale_assignment():
    pred = [(0, 0, 0, 0, 0), (9, 9, 9, 9, 9)]
    ref = [(0, 0, 0, 0, 0), (9, 9, 9, 9, 9)]
    stale = A.Assignment(((0, 1), (1, 0)), 810.0)
    with pytest.raises(A.AssignmentError, match="stale"):
        A.grounding_loss_grad(pred, ref, stale)
