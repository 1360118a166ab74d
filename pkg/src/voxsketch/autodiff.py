"""Minimal reverse-mode tensor engine on top of numpy.

Every trainable model in this package is expressed as a graph of the coarse
operations below (matmul, conv, layernorm, softmax, losses). Training runs in
float32; gradient checking against central finite differences runs in float64
via the ``precision`` context manager.
"""

from __future__ import annotations

import contextlib
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_CHECK_FINITE = bool(int(os.environ.get("VOXSKETCH_CHECK_FINITE", "0")))


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class NumericError(ArithmeticError):
    """A value that must be finite is not."""


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block (inference on frozen models)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def precision(bits):
    """Temporarily switch the dtype used for new tensors (32 or 64)."""
    global _DEFAULT_DTYPE
    if bits not in (32, 64):
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.float32 if bits == 32 else np.float64
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def _as_array(data, dtype=None):
    if isinstance(data, (np.ndarray, np.generic)):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            return arr.astype(dtype or _DEFAULT_DTYPE)
        if dtype is not None and arr.dtype != dtype:
            return arr.astype(dtype)
        return arr
    # python scalars and lists adopt the session dtype so float32 graphs
    # are not upcast by numpy promotion
    return np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)


class Tensor:
    """A numpy array plus the bookkeeping for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        if _CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise NumericError("tensor holds non-finite values")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor (scalar unless ``grad`` is given)."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar")
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t._accumulate(g)
            if t._backward is None:
                continue
            for parent, pg in zip(t._parents, t._backward(g)):
                if pg is None:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _needs_grad(t):
    return t.requires_grad or bool(t._parents)


def _node(data, parents, backward):
    track = _GRAD_ENABLED and any(_needs_grad(p) for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, _parents=parents, _backward=backward)


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def backward(g):
        return (
            _unbroadcast(g, a.shape) if _needs_grad(a) else None,
            _unbroadcast(g, b.shape) if _needs_grad(b) else None,
        )

    return _node(out, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape) if _needs_grad(a) else None,
            _unbroadcast(g * a.data, b.shape) if _needs_grad(b) else None,
        )

    return _node(out, (a, b), backward)


def relu(x):
    x = _wrap(x)
    out = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (x.data > 0.0),)

    return _node(out, (x,), backward)


def sigmoid(x):
    x = _wrap(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), backward)


def exp(x):
    x = _wrap(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _node(out, (x,), backward)


def log(x):
    x = _wrap(x)
    out = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return _node(out, (x,), backward)


def square(x):
    return mul(x, x)


def stopgrad(x):
    """Block gradient flow; the returned tensor is a graph leaf."""
    return Tensor(_wrap(x).data)


# -- shape manipulation ---------------------------------------------------


def reshape(x, *shape):
    x = _wrap(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _node(out, (x,), backward)


def transpose(x, axes=None):
    x = _wrap(x)
    out = x.data.transpose(axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return _node(out, (x,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _node(out, tuple(tensors), backward)


def reduce_sum(x, axis=None, keepdims=False):
    x = _wrap(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), backward)


def reduce_mean(x, axis=None, keepdims=False):
    x = _wrap(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis, keepdims), 1.0 / n)


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    """Matrix product, including stacked (batched) operands per numpy rules."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if _needs_grad(a):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if _needs_grad(b):
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(out, (a, b), backward)


def embedding(table, indices):
    """Row gather from a (rows, dim) table with accumulate-scatter backward."""
    table = _wrap(table)
    idx = np.asarray(indices)
    out = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _node(out, (table,), backward)


def softmax(x, axis=-1):
    """Stabilized softmax along ``axis``; rows sum to one."""
    x = _wrap(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (x,), backward)


def log_softmax(x, axis=-1):
    x = _wrap(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), backward)


def scaled_attention(q, k, v, scale):
    """softmax(scale * q @ k^T) @ v, fused with a hand-written backward.

    Operands are (B, Tq, d), (B, Tk, d), (B, Tk, d); B usually folds the head
    dimension. Fusing keeps the (B, Tq, Tk) weight array as the only large
    intermediate.
    """
    q, k, v = _wrap(q), _wrap(k), _wrap(v)
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention shapes disagree: {q.shape} {k.shape} {v.shape}")
    scores = (q.data * scale) @ np.swapaxes(k.data, -1, -2)
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    weights = scores
    out = weights @ v.data

    def backward(g):
        gq = gk = gv = None
        if _needs_grad(v):
            gv = np.swapaxes(weights, -1, -2) @ g
        if _needs_grad(q) or _needs_grad(k):
            gw = g @ np.swapaxes(v.data, -1, -2)
            gw *= weights
            gs = gw
            gs -= weights * gw.sum(axis=-1, keepdims=True)
            if _needs_grad(q):
                gq = (gs @ k.data) * scale
            if _needs_grad(k):
                gk = np.swapaxes(gs, -1, -2) @ (q.data * scale)
        return gq, gk, gv

    return _node(out, (q, k, v), backward)


def layernorm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    out = xn * gain.data + bias.data

    def backward(g):
        n = x.shape[-1]
        gxn = g * gain.data
        gx = inv * (
            gxn
            - gxn.mean(axis=-1, keepdims=True)
            - xn * (gxn * xn).mean(axis=-1, keepdims=True)
        )
        red = tuple(range(g.ndim - 1))
        return gx, (g * xn).sum(axis=red), g.sum(axis=red)

    return _node(out, (x, gain, bias), backward)


# -- losses ---------------------------------------------------------------


def masked_cross_entropy(logits, targets, mask):
    """Mean NLL of ``targets`` under row-softmax of ``logits``, masked rows only.

    ``logits`` is (N, K); ``targets`` holds class indices; ``mask`` selects the
    rows that contribute. Rows outside the mask affect neither value nor
    gradient.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 2:
        raise ShapeError("masked_cross_entropy expects (N, K) logits")
    n, k = logits.shape
    if targets.shape != (n,) or mask.shape != (n,):
        raise ShapeError("targets and mask must have one entry per logits row")
    if not mask.any():
        raise ValueError("masked_cross_entropy needs at least one masked row")
    if targets.min() < 0 or targets.max() >= k:
        raise ValueError("target index out of range")

    rows = np.flatnonzero(mask)
    sub = logits.data[rows]
    z = sub - sub.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    out = -logp[np.arange(rows.size), targets[rows]].mean()

    def backward(g):
        gl = np.zeros_like(logits.data)
        p = np.exp(logp)
        p[np.arange(rows.size), targets[rows]] -= 1.0
        gl[rows] = p * (g / rows.size)
        return (gl,)

    return _node(np.asarray(out, dtype=logits.dtype), (logits,), backward)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy of sigmoid(logits) against {0,1} targets."""
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=logits.dtype)
    x = logits.data
    # log(1+e^-|x|) formulation keeps large magnitudes finite
    out = (np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean()

    def backward(g):
        p = np.empty_like(x)
        pos = x >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        p[~pos] = ex / (1.0 + ex)
        return ((p - t) * (g / x.size),)

    return _node(np.asarray(out, dtype=logits.dtype), (logits,), backward)


# -- 3-d convolution ------------------------------------------------------


def _shift_stack(x, k, pad, out_spatial):
    """All k^3 shifted views of padded x as one (k^3, N, C) buffer.

    Each slot is a plain box-slice copy (contiguous inner runs), which is far
    faster than gathering an interleaved im2col matrix.
    """
    b, _, _, _, c = x.shape
    d, h, w = out_spatial
    xp = np.pad(x, ((0, 0),) + ((pad, pad),) * 3 + ((0, 0),)) if pad else x
    n = b * d * h * w
    stack = np.empty((k**3, n, c), dtype=x.dtype)
    slot = 0
    for dz in range(k):
        for dy in range(k):
            for dx in range(k):
                dest = stack[slot].reshape(b, d, h, w, c)
                dest[...] = xp[:, dz : dz + d, dy : dy + h, dx : dx + w, :]
                slot += 1
    return stack


def _corr3d(x, w, pad):
    """Stride-1 correlation of channels-last x (B,D,H,W,C) with w (F,C,k,k,k)."""
    k = w.shape[-1]
    b = x.shape[0]
    spatial = tuple(s - k + 1 + 2 * pad for s in x.shape[1:4])
    stack = _shift_stack(x, k, pad, spatial)
    # (k^3, C, F) weight slices; accumulate one GEMM per offset
    wk = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0)).reshape(k**3, w.shape[1], w.shape[0])
    out = stack[0] @ wk[0]
    tmp = np.empty_like(out)
    for slot in range(1, k**3):
        np.matmul(stack[slot], wk[slot], out=tmp)
        out += tmp
    return out.reshape((b,) + spatial + (w.shape[0],)), stack


def conv3d(x, w, bias=None, pad=1):
    """Stride-1 3-d convolution with 'same'-style padding, channels last.

    x: (B, D, H, W, C); w: (F, C, k, k, k); bias: (F,) or None. Output
    spatial size is D - k + 1 + 2*pad per axis. Downsampling in this package
    is done by :func:`space_to_depth` plus a 1x1x1 conv rather than strides,
    which is the identical linear map and keeps the backward scatter-free.
    """
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError("conv3d expects 5-d input and kernel")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"conv3d channel mismatch: {x.shape} vs {w.shape}")
    k = w.shape[-1]
    out, stack = _corr3d(x.data, w.data, pad)
    parents = (x, w)
    if bias is not None:
        bias = _wrap(bias)
        out += bias.data
        parents = (x, w, bias)

    def backward(g):
        f = w.shape[0]
        g_mat = np.ascontiguousarray(g).reshape(-1, f)
        gw = gx = None
        if _needs_grad(w):
            # per-offset weight gradients; BLAS takes transposed views directly
            gw = np.empty((k**3, w.shape[1], f), dtype=g_mat.dtype)
            for slot in range(k**3):
                np.matmul(stack[slot].T, g_mat, out=gw[slot])
            gw = gw.reshape((k, k, k, w.shape[1], f)).transpose(4, 3, 0, 1, 2)
        if _needs_grad(x):
            # input grad = full correlation with the flipped, swapped kernel
            w_flip = np.ascontiguousarray(
                w.data[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
            )
            gx, _ = _corr3d(np.ascontiguousarray(g), w_flip, k - 1 - pad)
        if bias is not None:
            return gx, gw, g_mat.sum(axis=0)
        return gx, gw

    return _node(out, parents, backward)


def space_to_depth(x, factor):
    """(B,fD,fH,fW,C) -> (B,D,H,W,f^3*C) by folding f-blocks into channels."""
    x = _wrap(x)
    b, d, h, w, c = x.shape
    f = factor

    def fold(a):
        a = a.reshape(b, d // f, f, h // f, f, w // f, f, c)
        a = a.transpose(0, 1, 3, 5, 2, 4, 6, 7)
        return np.ascontiguousarray(a).reshape(b, d // f, h // f, w // f, f**3 * c)

    def unfold(g):
        g = g.reshape(b, d // f, h // f, w // f, f, f, f, c)
        g = g.transpose(0, 1, 4, 2, 5, 3, 6, 7)
        return (np.ascontiguousarray(g).reshape(b, d, h, w, c),)

    return _node(fold(x.data), (x,), unfold)


def depth_to_space(x, factor):
    """Inverse of :func:`space_to_depth`."""
    x = _wrap(x)
    b, d, h, w, cf = x.shape
    f = factor
    c = cf // f**3

    def unfold(a):
        a = a.reshape(b, d, h, w, f, f, f, c)
        a = a.transpose(0, 1, 4, 2, 5, 3, 6, 7)
        return np.ascontiguousarray(a).reshape(b, d * f, h * f, w * f, c)

    def fold(g):
        g = g.reshape(b, d, f, h, f, w, f, c)
        g = g.transpose(0, 1, 3, 5, 2, 4, 6, 7)
        return (np.ascontiguousarray(g).reshape(b, d, h, w, cf),)

    return _node(unfold(x.data), (x,), fold)


# -- parameters and Adam --------------------------------------------------


@dataclass
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


class Parameter:
    """A trainable tensor plus its Adam moment buffers."""

    def __init__(self, data, name=""):
        self.value = Tensor(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.value.data)
        self.v = np.zeros_like(self.value.data)
        self.step = 0

    @property
    def data(self):
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    def zero_grad(self):
        self.value.grad = None


def adam_step(param, config):
    """One bias-corrected Adam update; increments the step and clears the grad."""
    g = param.value.grad
    if g is None:
        raise ValueError(f"parameter {param.name!r} has no gradient")
    param.step += 1
    t = param.step
    param.m = config.beta1 * param.m + (1 - config.beta1) * g
    param.v = config.beta2 * param.v + (1 - config.beta2) * g * g
    m_hat = param.m / (1 - config.beta1**t)
    v_hat = param.v / (1 - config.beta2**t)
    param.value.data -= (
        config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    ).astype(param.value.data.dtype)
    param.zero_grad()
    return param


def uniform_init(rng, shape, fan_in):
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(_DEFAULT_DTYPE)


# -- finite-difference checking -------------------------------------------


def gradient_check(function, point, step=1e-5):
    """Max relative error between reverse-mode and central-difference gradients.

    ``function`` maps a Tensor to a scalar Tensor. The point is evaluated in
    float64 regardless of its incoming dtype; the model the closure captures
    should also be float64 for the comparison to be meaningful.
    """
    x = Tensor(np.asarray(point.data if isinstance(point, Tensor) else point, dtype=np.float64), requires_grad=True)
    out = function(x)
    if not np.isfinite(out.data).all():
        raise NumericError("function value is not finite")
    out.backward()
    analytic = x.grad.copy()

    flat = x.data.flat
    numeric = np.zeros(x.size, dtype=np.float64)
    for i in range(x.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = float(function(Tensor(x.data)).data)
        flat[i] = keep - step
        lo = float(function(Tensor(x.data)).data)
        flat[i] = keep
        numeric[i] = (hi - lo) / (2 * step)
    numeric = numeric.reshape(x.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_parameter_gradients(loss_fn, parameters, step=1e-5, max_per_param=None, rng=None):
    """FD-check the gradient of ``loss_fn()`` with respect to whole Parameters.

    ``loss_fn`` closes over the parameters and returns a scalar Tensor. Every
    element (or a random subset of ``max_per_param`` per parameter) is
    perturbed centrally. Returns the max relative error across all checks.
    """
    parameters = list(parameters)
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = {p.name: (p.value.grad.copy() if p.value.grad is not None else np.zeros_like(p.data)) for p in parameters}
    for p in parameters:
        p.zero_grad()

    worst = 0.0
    for p in parameters:
        flat = p.value.data.flat
        idxs = range(p.data.size)
        if max_per_param is not None and p.data.size > max_per_param:
            idxs = (rng or np.random.default_rng(0)).choice(
                p.data.size, size=max_per_param, replace=False
            )
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + step
            hi = float(loss_fn().data)
            flat[i] = keep - step
            lo = float(loss_fn().data)
            flat[i] = keep
            numeric = (hi - lo) / (2 * step)
            a = analytic[p.name].flat[i]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
