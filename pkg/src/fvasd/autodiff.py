"""Reverse-mode autodiff over dense 2-D tensors, sized for the scorer head.

The op set is deliberately fixed: affine maps, layer norm, softmax,
scaled dot-product multi-head attention, row pooling, cross-entropy,
plus the elementwise glue they need. No general broadcasting. Graphs
are built implicitly through parent links; ``backward`` walks them in
reverse topological order exactly once. Compute is float32 by default;
building inputs as float64 switches the whole graph for verification.

Gradients accumulate across backward calls, so callers reset parameter
grads (``zero_grad``) between steps; a graph is not reusable for a
second backward without rebuilding it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection (on by default)."""
    global CHECK_FINITE
    CHECK_FINITE = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def _out(data: np.ndarray, parents: tuple, backward) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise FloatingPointError("op produced a non-finite value")
    t = Tensor(data)
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._backward = backward
    return t


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> None:
    """Populate grads of everything the scalar ``loss`` depends on."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    _acc(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# -- elementwise and structural ops -----------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch {a.data.shape} vs {b.data.shape}")

    def back(g):
        _acc(a, g)
        _acc(b, g)

    return _out(a.data + b.data, (a, b), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias: (T, D) + (D,)."""
    if x.data.shape[-1] != b.data.shape[0] or b.data.ndim != 1:
        raise ValueError(f"bias shape {b.data.shape} does not match {x.data.shape}")

    def back(g):
        _acc(x, g)
        _acc(b, g.sum(axis=0))

    return _out(x.data + b.data[None, :], (x, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch {a.data.shape} vs {b.data.shape}")

    def back(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _out(a.data * b.data, (a, b), back)


def mul_scalar(x: Tensor, s: float) -> Tensor:
    def back(g):
        _acc(x, g * s)

    return _out(x.data * x.data.dtype.type(s), (x,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")

    def back(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _out(a.data @ b.data, (a, b), back)


def transpose(x: Tensor) -> Tensor:
    def back(g):
        _acc(x, g.T)

    return _out(x.data.T.copy(), (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g):
        _acc(x, g * mask)

    return _out(x.data * mask, (x,), back)


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Smooth tanh-form GELU; used as the FFN nonlinearity.

    Chosen over plain ReLU so gradient checks stay meaningful everywhere
    (no kink for finite differences to straddle).
    """
    z = x.data
    inner = _GELU_C * (z + _GELU_A * z**3)
    t = np.tanh(inner)
    y = 0.5 * z * (1.0 + t)

    def back(g):
        sech2 = 1.0 - t * t
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * z * z)
        _acc(x, g * (0.5 * (1.0 + t) + 0.5 * z * sech2 * dinner))

    return _out(y, (x,), back)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _acc(x, full)

    return _out(x.data[:, start:stop].copy(), (x,), back)


def concat_cols(parts: list[Tensor]) -> Tensor:
    widths = [p.data.shape[1] for p in parts]

    def back(g):
        off = 0
        for p, w in zip(parts, widths):
            _acc(p, g[:, off : off + w])
            off += w

    return _out(np.concatenate([p.data for p in parts], axis=1), tuple(parts), back)


def concat_rows(parts: list[Tensor]) -> Tensor:
    heights = [p.data.shape[0] for p in parts]

    def back(g):
        off = 0
        for p, h in zip(parts, heights):
            _acc(p, g[off : off + h])
            off += h

    return _out(np.concatenate([p.data for p in parts], axis=0), tuple(parts), back)


def flatten(x: Tensor) -> Tensor:
    shape = x.data.shape

    def back(g):
        _acc(x, g.reshape(shape))

    return _out(x.data.reshape(-1).copy(), (x,), back)


def sum_all(x: Tensor) -> Tensor:
    def back(g):
        _acc(x, np.full_like(x.data, g))

    return _out(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), back)


def mean_rows(x: Tensor) -> Tensor:
    """(T, D) -> (1, D) row average."""
    t = x.data.shape[0]

    def back(g):
        _acc(x, np.repeat(g, t, axis=0) / t)

    return _out(x.data.mean(axis=0, keepdims=True), (x,), back)


# -- normalizations and losses ----------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; rows sum to 1."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _acc(x, (g - inner) * y)

    return _out(y, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization over the last axis, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(f"layer_norm gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def back(g):
        _acc(gain, (g * xhat).sum(axis=0))
        _acc(bias, g.sum(axis=0))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _acc(x, (dxhat - m1 - xhat * m2) * inv)

    return _out(xhat * gain.data + bias.data, (x, gain, bias), back)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    norms = np.maximum(norms, eps)
    y = x.data / norms

    def back(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _acc(x, (g - y * inner) / norms)

    return _out(y, (x,), back)


def cross_entropy_logits(logits: Tensor, target: int) -> Tensor:
    """Negative log-softmax of ``logits`` (1-D) at index ``target``."""
    z = logits.data
    if z.ndim != 1:
        raise ValueError("cross_entropy_logits expects a flat logit vector")
    m = z.max()
    e = np.exp(z - m)
    probs = e / e.sum()
    loss = np.log(e.sum()) + m - z[target]

    def back(g):
        d = probs.copy()
        d[target] -= 1.0
        _acc(logits, g * d)

    return _out(np.asarray(loss, dtype=z.dtype), (logits,), back)


def multi_similarity(
    s: Tensor,
    labels: np.ndarray,
    alpha: float,
    beta: float,
    lam: float,
    margin: float,
) -> Tensor:
    """Pair-mining multi-similarity loss over a batch similarity matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    loss, ds = kernels.ms_loss_grad(
        s.data.astype(np.float64), labels, float(alpha), float(beta), float(lam), float(margin)
    )

    def back(g):
        _acc(s, (g * ds).astype(s.data.dtype))

    return _out(np.asarray(loss, dtype=s.data.dtype), (s,), back)


def mean_of(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for extra in losses[1:]:
        total = add(total, extra)
    return mul_scalar(total, 1.0 / len(losses))


# -- attention ----------------------------------------------------------------


@dataclass
class AttentionParams:
    """Q/K/V/output projections of one multi-head attention block."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: AttentionParams, n_heads: int = 4) -> Tensor:
    """Scaled dot-product attention with ``n_heads`` heads.

    Queries (Tq, D) attend over keys/values (Tk, D); per-head scale is
    1/sqrt(D/n_heads); head outputs are concatenated and projected.
    """
    d = q.data.shape[1]
    if d % n_heads != 0:
        raise ValueError(f"model width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)
    qp = add_bias(matmul(q, params.wq), params.bq)
    kp = add_bias(matmul(k, params.wk), params.bk)
    vp = add_bias(matmul(v, params.wv), params.bv)
    heads = []
    for h in range(n_heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = slice_cols(qp, lo, hi)
        kh = slice_cols(kp, lo, hi)
        vh = slice_cols(vp, lo, hi)
        scores = mul_scalar(matmul(qh, transpose(kh)), scale)
        weights = softmax(scores, axis=-1)
        heads.append(matmul(weights, vh))
    merged = concat_cols(heads) if n_heads > 1 else heads[0]
    return add_bias(matmul(merged, params.wo), params.bo)


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter list."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match param {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
