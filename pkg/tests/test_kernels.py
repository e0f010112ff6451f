"""Numpy/numba kernel pairs: semantic checks plus cross-path agreement."""

import numpy as np
import pytest

from fvasd import kernels as K

from .oracles import greedy_match_reference

needs_numba = pytest.mark.skipif(not K.NUMBA_ENABLED, reason="numba unavailable or disabled")


def _random_inputs(rng):
    x = rng.standard_normal((60, 7))
    c = x[rng.choice(60, 5, replace=False)].copy()
    s = rng.uniform(-1, 1, (10, 10))
    s = (s + s.T) / 2
    labels = rng.integers(0, 3, 10)
    stream = rng.standard_normal((40, 5))
    det = rng.integers(0, 30, 25).astype(np.int64)
    gt = np.unique(rng.integers(0, 30, 12).astype(np.int64))
    sig = rng.standard_normal(33)
    return x, c, s, labels, stream, det, gt, sig


def test_assign_clusters_semantics(rng):
    x = np.array([[0.0, 0.0], [1.0, 1.0], [10.0, 10.0]])
    c = np.array([[0.0, 0.0], [10.0, 10.0]])
    labels, inertia = K.assign_clusters(x, c)
    assert labels.tolist() == [0, 0, 1]
    assert inertia == pytest.approx(2.0)


def test_sum_by_label_semantics():
    x = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    sums, counts = K.sum_by_label(x, np.array([1, 1, 0], dtype=np.int64), 3)
    np.testing.assert_allclose(sums, [[5, 6], [4, 6], [0, 0]])
    assert counts.tolist() == [1, 2, 0]


def test_moving_average_semantics():
    out = K.moving_average(np.array([0.0, 1.0, 2.0, 3.0, 4.0]), 3)
    np.testing.assert_allclose(out, [0.5, 1.0, 2.0, 3.0, 3.5])


def test_greedy_match_vs_reference(rng):
    for _ in range(25):
        det = rng.integers(0, 15, 20).astype(np.int64)
        gt = np.unique(rng.integers(0, 15, 8).astype(np.int64))
        got = K.greedy_match(det, gt)
        assert list(got) == greedy_match_reference(det.tolist(), gt.tolist())


def test_window_cos_dist_short_stream():
    assert K.window_cos_dist(np.ones((3, 4)), 5).sum() == 0.0


def test_ms_loss_no_pairs():
    s = np.eye(3)
    loss, grad = K.ms_loss_grad(s, np.array([0, 1, 2], dtype=np.int64), 2.0, 50.0, 0.5, 0.1)
    assert loss == 0.0
    assert np.all(grad == 0.0)


@needs_numba
@pytest.mark.parametrize("name", sorted(K.PAIRS))
def test_numba_matches_numpy(name, rng):
    py, nb = K.PAIRS[name]
    x, c, s, labels, stream, det, gt, sig = _random_inputs(rng)
    if name == "assign_clusters":
        args = (x, c)
    elif name == "sum_by_label":
        args = (x, rng.integers(0, 5, x.shape[0]).astype(np.int64), 5)
    elif name == "ms_loss_grad":
        args = (s, np.asarray(labels, dtype=np.int64), 2.0, 50.0, 0.5, 0.1)
    elif name == "window_cos_dist":
        args = (stream, 4)
    elif name == "greedy_match":
        args = (det, gt)
    else:
        args = (sig, 5)
    a, b = py(*args), nb(*args)
    for lhs, rhs in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        np.testing.assert_allclose(np.asarray(lhs, dtype=np.float64), np.asarray(rhs, dtype=np.float64), atol=1e-10)
