"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The JIT path is used when numba imports cleanly; set ``FVASD_NUMBA=0``
to force the pure-numpy fallbacks (``FVASD_NUMBA=1`` makes a missing
numba an error instead of a silent fallback). Both paths compute the
same quantities; floating-point summation order may differ, so exact
bitwise equality across paths is not guaranteed.

``benchmarks/bench_kernels.py`` times the two paths side by side.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("FVASD_NUMBA", "auto").strip().lower()


def _resolve_numba():
    if _FLAG in {"0", "off", "false", "no"}:
        return None
    try:
        import numba
    except ImportError:
        if _FLAG in {"1", "on", "true", "yes"}:
            raise RuntimeError("FVASD_NUMBA=1 but numba is not importable")
        return None
    return numba


_numba = _resolve_numba()
NUMBA_ENABLED = _numba is not None


def _jit(fn):
    if _numba is None:
        return None
    return _numba.njit(cache=True)(fn)


# ---------------------------------------------------------------------------
# k-means: assignment and accumulation


def assign_clusters_numpy(x: np.ndarray, centroids: np.ndarray):
    """Nearest centroid per row; returns (labels, inertia)."""
    d2 = (
        (x * x).sum(axis=1)[:, None]
        + (centroids * centroids).sum(axis=1)[None, :]
        - 2.0 * x @ centroids.T
    )
    labels = np.argmin(d2, axis=1)
    diff = x - centroids[labels]
    inertia = float((diff * diff).sum())
    return labels.astype(np.int64), inertia


def _assign_clusters_loop(x, centroids):
    n, d = x.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    inertia = 0.0
    for i in range(n):
        best = 0
        best_d = np.inf
        for c in range(k):
            acc = 0.0
            for j in range(d):
                diff = x[i, j] - centroids[c, j]
                acc += diff * diff
            if acc < best_d:
                best_d = acc
                best = c
        labels[i] = best
        inertia += best_d
    return labels, inertia


assign_clusters_numba = _jit(_assign_clusters_loop)


def sum_by_label_numpy(x: np.ndarray, labels: np.ndarray, k: int):
    """Per-cluster coordinate sums and member counts."""
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x.astype(np.float64))
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


def _sum_by_label_loop(x, labels, k):
    n, d = x.shape
    sums = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        lab = labels[i]
        counts[lab] += 1
        for j in range(d):
            sums[lab, j] += x[i, j]
    return sums, counts


sum_by_label_numba = _jit(_sum_by_label_loop)


# ---------------------------------------------------------------------------
# Multi-similarity loss over a batch similarity matrix.
#
# Mining per anchor row i (diagonal excluded): positives with
# s < max_negative + margin, negatives with s > min_positive - margin.
# Loss and d(loss)/dS are averaged over all anchor rows.


def ms_loss_grad_numpy(s, labels, alpha, beta, lam, margin):
    b = s.shape[0]
    loss = 0.0
    grad = np.zeros_like(s, dtype=np.float64)
    same = labels[None, :] == labels[:, None]
    eye = np.eye(b, dtype=bool)
    for i in range(b):
        pos = same[i] & ~eye[i]
        neg = ~same[i]
        if not pos.any() or not neg.any():
            continue
        max_neg = s[i, neg].max()
        min_pos = s[i, pos].min()
        mined_pos = pos & (s[i] < max_neg + margin)
        mined_neg = neg & (s[i] > min_pos - margin)
        if mined_pos.any():
            ep = np.exp(-alpha * (s[i, mined_pos] - lam))
            zp = 1.0 + ep.sum()
            loss += math.log(zp) / alpha
            grad[i, mined_pos] += -ep / zp
        if mined_neg.any():
            en = np.exp(beta * (s[i, mined_neg] - lam))
            zn = 1.0 + en.sum()
            loss += math.log(zn) / beta
            grad[i, mined_neg] += en / zn
    return loss / b, grad / b


def _ms_loss_grad_loop(s, labels, alpha, beta, lam, margin):
    b = s.shape[0]
    loss = 0.0
    grad = np.zeros_like(s)
    for i in range(b):
        max_neg = -np.inf
        min_pos = np.inf
        has_pos = False
        has_neg = False
        for j in range(b):
            if j == i:
                continue
            if labels[j] == labels[i]:
                has_pos = True
                if s[i, j] < min_pos:
                    min_pos = s[i, j]
            else:
                has_neg = True
                if s[i, j] > max_neg:
                    max_neg = s[i, j]
        if not (has_pos and has_neg):
            continue
        zp = 1.0
        zn = 1.0
        for j in range(b):
            if j == i:
                continue
            if labels[j] == labels[i]:
                if s[i, j] < max_neg + margin:
                    zp += math.exp(-alpha * (s[i, j] - lam))
            else:
                if s[i, j] > min_pos - margin:
                    zn += math.exp(beta * (s[i, j] - lam))
        loss += math.log(zp) / alpha + math.log(zn) / beta
        for j in range(b):
            if j == i:
                continue
            if labels[j] == labels[i]:
                if s[i, j] < max_neg + margin:
                    grad[i, j] += -math.exp(-alpha * (s[i, j] - lam)) / zp
            else:
                if s[i, j] > min_pos - margin:
                    grad[i, j] += math.exp(beta * (s[i, j] - lam)) / zn
    inv = 1.0 / b
    return loss * inv, grad * inv


ms_loss_grad_numba = _jit(_ms_loss_grad_loop)


# ---------------------------------------------------------------------------
# Sliding-window cosine distance between adjacent window means.
#
# d[t] compares the mean embedding over [t-w, t) with the mean over
# [t, t+w); entries outside [w, n-w] stay 0.


def window_cos_dist_numpy(stream: np.ndarray, w: int) -> np.ndarray:
    n = stream.shape[0]
    d = np.zeros(n, dtype=np.float64)
    if n < 2 * w:
        return d
    prefix = np.vstack([np.zeros((1, stream.shape[1])), np.cumsum(stream, axis=0)])
    ts = np.arange(w, n - w + 1)
    left = (prefix[ts] - prefix[ts - w]) / w
    right = (prefix[ts + w] - prefix[ts]) / w
    ln = np.linalg.norm(left, axis=1)
    rn = np.linalg.norm(right, axis=1)
    dot = (left * right).sum(axis=1)
    ok = (ln > 1e-12) & (rn > 1e-12)
    vals = np.zeros(len(ts))
    vals[ok] = 1.0 - dot[ok] / (ln[ok] * rn[ok])
    d[ts] = vals
    return d


def _window_cos_dist_loop(stream, w):
    n, dim = stream.shape
    d = np.zeros(n, dtype=np.float64)
    if n < 2 * w:
        return d
    for t in range(w, n - w + 1):
        dot = 0.0
        ln = 0.0
        rn = 0.0
        for j in range(dim):
            lv = 0.0
            rv = 0.0
            for i in range(t - w, t):
                lv += stream[i, j]
            for i in range(t, t + w):
                rv += stream[i, j]
            lv /= w
            rv /= w
            dot += lv * rv
            ln += lv * lv
            rn += rv * rv
        ln = math.sqrt(ln)
        rn = math.sqrt(rn)
        if ln > 1e-12 and rn > 1e-12:
            d[t] = 1.0 - dot / (ln * rn)
    return d


window_cos_dist_numba = _jit(_window_cos_dist_loop)


# ---------------------------------------------------------------------------
# Greedy ranked matching for AP: a detection is a true positive iff its
# key exists in the (sorted) groundtruth key array and that key has not
# been claimed by a higher-ranked detection.


def greedy_match_numpy(det_keys: np.ndarray, gt_keys_sorted: np.ndarray) -> np.ndarray:
    tp = np.zeros(len(det_keys), dtype=bool)
    taken: set[int] = set()
    gt = set(int(k) for k in gt_keys_sorted)
    for i, key in enumerate(det_keys):
        key = int(key)
        if key in gt and key not in taken:
            tp[i] = True
            taken.add(key)
    return tp


def _greedy_match_loop(det_keys, gt_keys_sorted):
    m = det_keys.shape[0]
    g = gt_keys_sorted.shape[0]
    tp = np.zeros(m, dtype=np.bool_)
    taken = np.zeros(g, dtype=np.bool_)
    for i in range(m):
        key = det_keys[i]
        idx = np.searchsorted(gt_keys_sorted, key)
        if idx < g and gt_keys_sorted[idx] == key and not taken[idx]:
            tp[i] = True
            taken[idx] = True
    return tp


greedy_match_numba = _jit(_greedy_match_loop)


# ---------------------------------------------------------------------------
# Centered moving average with edge truncation (window k, k odd or even;
# each output averages the in-range slice [i-k//2, i+(k-1)//2]).


def moving_average_numpy(x: np.ndarray, k: int) -> np.ndarray:
    n = len(x)
    if k <= 1 or n == 0:
        return x.astype(np.float64, copy=True)
    prefix = np.concatenate([[0.0], np.cumsum(x, dtype=np.float64)])
    idx = np.arange(n)
    lo = np.maximum(idx - k // 2, 0)
    hi = np.minimum(idx + (k - 1) // 2, n - 1)
    return (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1)


def _moving_average_loop(x, k):
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    if k <= 1:
        for i in range(n):
            out[i] = x[i]
        return out
    half_lo = k // 2
    half_hi = (k - 1) // 2
    for i in range(n):
        lo = i - half_lo
        if lo < 0:
            lo = 0
        hi = i + half_hi
        if hi > n - 1:
            hi = n - 1
        acc = 0.0
        for j in range(lo, hi + 1):
            acc += x[j]
        out[i] = acc / (hi - lo + 1)
    return out


moving_average_numba = _jit(_moving_average_loop)


# ---------------------------------------------------------------------------
# Dispatch

if NUMBA_ENABLED:
    assign_clusters = assign_clusters_numba
    sum_by_label = sum_by_label_numba
    ms_loss_grad = ms_loss_grad_numba
    window_cos_dist = window_cos_dist_numba
    greedy_match = greedy_match_numba
    moving_average = moving_average_numba
else:
    assign_clusters = assign_clusters_numpy
    sum_by_label = sum_by_label_numpy
    ms_loss_grad = ms_loss_grad_numpy
    window_cos_dist = window_cos_dist_numpy
    greedy_match = greedy_match_numpy
    moving_average = moving_average_numpy

PAIRS = {
    "assign_clusters": (assign_clusters_numpy, assign_clusters_numba),
    "sum_by_label": (sum_by_label_numpy, sum_by_label_numba),
    "ms_loss_grad": (ms_loss_grad_numpy, ms_loss_grad_numba),
    "window_cos_dist": (window_cos_dist_numpy, window_cos_dist_numba),
    "greedy_match": (greedy_match_numpy, greedy_match_numba),
    "moving_average": (moving_average_numpy, moving_average_numba),
}
