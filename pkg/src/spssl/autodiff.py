"""Dense array arithmetic with reverse-mode differentiation.

Every learnable computation in this repo runs through the ops below. The
recorded graph is define-by-run: each non-leaf tensor keeps its parents and
a closure that routes the incoming gradient to them, and ``backward`` walks
the graph in reverse topological (i.e. reverse execution) order. Gradient
accumulation is additive, so a tensor consumed twice receives the sum of
both contributions.

Verification (``grad_check``) runs in float64; training may run in float32.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_FINITE_CHECKS = True

# tanh-approximation GELU constants (Hendrycks & Gimpel)
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (e.g. teacher forward passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Toggle per-op finiteness checks.

    Checks are on by default. The training hot loop disables them and instead
    verifies the loss scalar every step, which catches the same failures with
    one check instead of one per op.
    """
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


def _check_finite(data: np.ndarray) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError("forward op produced non-finite values")


class Tensor:
    """A dense real-valued array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_finite(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray, fresh: bool = False) -> None:
    """Add ``g`` into ``t.grad``.

    ``fresh=True`` asserts the caller allocated ``g`` and will not touch it
    again, letting the first accumulation take ownership instead of copying.
    Gradients that alias another tensor's buffer (views from reshape,
    transpose, broadcast or identity pass-through) must use ``fresh=False``.
    """
    if t.grad is None:
        if fresh and g.dtype == t.data.dtype:
            t.grad = g
        else:
            t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        ga = _unbroadcast(g, a.shape)
        _accumulate(a, ga, fresh=ga is not g)
        gb = _unbroadcast(g, b.shape)
        _accumulate(b, gb, fresh=gb is not g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        ga = _unbroadcast(g, a.shape)
        _accumulate(a, ga, fresh=ga is not g)
        _accumulate(b, _unbroadcast(-g, b.shape), fresh=True)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape), fresh=True)
        _accumulate(b, _unbroadcast(g * a.data, b.shape), fresh=True)

    return _make(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape), fresh=True)
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape), fresh=True)

    return _make(a.data / b.data, (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    def bwd(g):
        _accumulate(x, g * c, fresh=True)

    return _make(x.data * c, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def bwd(g):
        _accumulate(x, g * (x.data > 0), fresh=True)

    return _make(out_data, (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """GELU via the tanh approximation: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    one = x.data.dtype.type(1)
    half = x.data.dtype.type(0.5)
    a = x.data.dtype.type(_GELU_A)
    c = x.data.dtype.type(_GELU_C)
    u = x.data * x.data
    u *= a
    u += one
    u *= x.data
    u *= c
    t = np.tanh(u, out=u)
    out_data = t + one
    out_data *= x.data
    out_data *= half

    def bwd(g):
        du = x.data * x.data  # c * (1 + 3a x^2)
        du *= x.data.dtype.type(3.0 * _GELU_A)
        du += one
        du *= c
        local = t * t  # 0.5 (1+t) + 0.5 x (1-t^2) du
        np.subtract(one, local, out=local)
        local *= du
        local *= x.data
        local += t
        local += one
        local *= half
        local *= g
        _accumulate(x, local, fresh=True)

    return _make(out_data, (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)

    def bwd(g):
        _accumulate(x, g * (0.5 / r), fresh=True)

    return _make(r, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def bwd(g):
        _accumulate(x, g * e, fresh=True)

    return _make(e, (x,), bwd)


def log(x: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(x, g / x.data, fresh=True)

    return _make(np.log(x.data), (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics over leading axes."""
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape), fresh=True)
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape), fresh=True)

    return _make(out_data, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fused x @ w + b; one graph node to keep the training tape short."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear dims disagree: {x.shape} @ {w.shape}")
    # flatten leading axes so both passes run as single 2-D GEMMs
    lead = x.shape[:-1]
    x2d = x.data.reshape(-1, x.shape[-1])
    out_data = x2d @ w.data
    if b is not None:
        out_data += b.data
    out_data = out_data.reshape(*lead, w.shape[1])

    def bwd(g):
        g2d = g.reshape(-1, g.shape[-1])
        _accumulate(x, (g2d @ w.data.T).reshape(x.shape), fresh=True)
        _accumulate(w, x2d.T @ g2d, fresh=True)
        if b is not None:
            _accumulate(b, g2d.sum(axis=0), fresh=True)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, bwd)


def multihead_attention(x: Tensor, wqkv: Tensor, bqkv: Tensor, wproj: Tensor,
                        bproj: Tensor, heads: int, capture: list | None = None) -> Tensor:
    """Fused multi-head self-attention: qkv projection, scaled dot-product
    softmax, and output projection in one graph node.

    ``x`` is (B, T, D); logits are scaled by 1/sqrt(D/heads). ``capture``
    collects the (B, heads, T, T) attention weights when provided.
    """
    b, t, d = x.shape
    if d % heads:
        raise ShapeError("model dim must divide into heads")
    hd = d // heads
    inv = np.float64(1.0 / np.sqrt(hd)).astype(x.dtype)
    x2d = x.data.reshape(b * t, d)
    qkv = x2d @ wqkv.data
    qkv += bqkv.data
    # (B, T, 3, H, hd) -> (3, B, H, T, hd)
    qkv = qkv.reshape(b, t, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = q @ k.swapaxes(-1, -2)
    logits *= inv
    logits -= logits.max(axis=-1, keepdims=True)
    attn = np.exp(logits, out=logits)
    attn /= attn.sum(axis=-1, keepdims=True)
    if capture is not None:
        capture.append(attn.copy())
    ctx = attn @ v  # (B, H, T, hd)
    ctx2d = ctx.transpose(0, 2, 1, 3).reshape(b * t, d)
    out = ctx2d @ wproj.data
    out += bproj.data

    def bwd(g):
        g2d = g.reshape(b * t, d)
        _accumulate(wproj, ctx2d.T @ g2d, fresh=True)
        _accumulate(bproj, g2d.sum(axis=0), fresh=True)
        gctx = (g2d @ wproj.data.T).reshape(b, t, heads, hd).transpose(0, 2, 1, 3)
        gattn = gctx @ v.swapaxes(-1, -2)
        gv = attn.swapaxes(-1, -2) @ gctx
        dot = (gattn * attn).sum(axis=-1, keepdims=True)
        glog = attn * (gattn - dot)
        glog *= inv
        gq = glog @ k
        gk = glog.swapaxes(-1, -2) @ q
        gqkv = np.empty((3, b, heads, t, hd), dtype=g.dtype)
        gqkv[0], gqkv[1], gqkv[2] = gq, gk, gv
        g_qkv2d = gqkv.transpose(1, 3, 0, 2, 4).reshape(b * t, 3 * d)
        _accumulate(x, (g_qkv2d @ wqkv.data.T).reshape(b, t, d), fresh=True)
        _accumulate(wqkv, x2d.T @ g_qkv2d, fresh=True)
        _accumulate(bqkv, g_qkv2d.sum(axis=0), fresh=True)

    return _make(out.reshape(b, t, d), (x, wqkv, bqkv, wproj, bproj), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed with row-max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(x, y * (g - dot), fresh=True)

    return _make(y, (x,), bwd)


def layer_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Standardize the last axis to zero mean / unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (g - gm - y * gy), fresh=True)

    return _make(y, (x,), bwd)


def layer_norm_affine(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Fused ``layer_norm(x) * gain + bias`` (one graph node)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out_data = y * gain.data + bias.data

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        y2 = y.reshape(-1, g.shape[-1])
        _accumulate(bias, g2.sum(axis=0), fresh=True)
        _accumulate(gain, (g2 * y2).sum(axis=0), fresh=True)
        gy = g * gain.data
        gm = gy.mean(axis=-1, keepdims=True)
        gyy = (gy * y).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (gy - gm - y * gyy), fresh=True)

    return _make(out_data, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    def bwd(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), bwd)


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def bwd(g):
        _accumulate(x, g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        _accumulate(x, full, fresh=True)

    return _make(x.data[idx].copy(), (x,), bwd)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    indices = np.asarray(indices)

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (slice(None),) * axis + (indices,), g)
        _accumulate(x, full, fresh=True)

    return _make(np.take(x.data, indices, axis=axis), (x,), bwd)


def concat(xs: Iterable[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    widths = [t.shape[axis] for t in xs]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        idx = [slice(None)] * g.ndim
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in xs], axis=axis), xs, bwd)


def concat_last(xs: Iterable[Tensor]) -> Tensor:
    return concat(xs, axis=-1)


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    def bwd(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).copy(), fresh=True)
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(), fresh=True)

    return _make(x.data.sum(axis=axis), (x,), bwd)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]

    def bwd(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g / count, x.shape).copy(), fresh=True)
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis) / count, x.shape).copy(), fresh=True)

    return _make(x.data.mean(axis=axis), (x,), bwd)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError("cross_entropy expects B x K logits")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError("labels must have one entry per logits row")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label index out of range")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    loss = -logp[np.arange(n), labels].mean()

    def bwd(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        _accumulate(logits, g * p / n, fresh=True)

    return _make(np.asarray(loss), (logits,), bwd)


# ---------------------------------------------------------------------------
# backward traversal and verification


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every reachable tensor with requires_grad.

    ``root`` must be scalar. Nodes are visited in exact reverse execution
    order (reverse topological order of the recorded graph).
    """
    if root.size != 1:
        raise ShapeError("backward root must be scalar")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    ``x`` should be float64 for the finite differences to be reliable.
    """
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    out = f(x64)
    if out.size != 1:
        raise ShapeError("grad_check expects a scalar-valued function")
    backward(out)
    analytic = np.zeros_like(x64.data) if x64.grad is None else x64.grad.copy()

    numeric = np.zeros_like(x64.data)
    flat = x64.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(Tensor(x64.data)).data)
            flat[i] = orig - eps
            lo = float(f(Tensor(x64.data)).data)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
