"""Reusable parameterized layers built on the autodiff engine.

A ParamBag owns every Parameter of a model under a flat dotted name space,
which is also the checkpoint schema. Layers register themselves into the bag
at construction time.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, uniform_init


class ParamBag:
    """Flat registry of named parameters with checkpoint (de)serialization."""

    def __init__(self):
        self._params = {}

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(array, name=name)
        self._params[name] = p
        return p

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def state_dict(self):
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch; missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, p in self._params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}"
                )
            p.value.data = arr.copy()

    def zero_grads(self):
        for p in self:
            p.zero_grad()

    def step_all(self, adam_config):
        for p in self:
            if p.value.grad is not None:
                ad.adam_step(p, adam_config)

    def num_values(self):
        return sum(p.data.size for p in self)

    def checksum(self):
        """Stable digest of all parameter bytes; detects any weight drift."""
        h = hashlib.sha256()
        for name in sorted(self._params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._params[name].data).tobytes())
        return h.hexdigest()


def linear(x, w, b=None):
    """Affine map on the last axis; x may carry any number of batch dims."""
    shape = x.shape
    d_in = shape[-1]
    flat = ad.reshape(x, (-1, d_in)) if x.ndim != 2 else x
    out = ad.matmul(flat, w.value)
    if b is not None:
        out = ad.add(out, b.value)
    if x.ndim != 2:
        out = ad.reshape(out, shape[:-1] + (w.data.shape[1],))
    return out


class Linear:
    def __init__(self, bag, name, d_in, d_out, rng, bias=True, zero_init=False):
        init = (
            np.zeros((d_in, d_out), dtype=ad.default_dtype())
            if zero_init
            else uniform_init(rng, (d_in, d_out), d_in)
        )
        self.w = bag.add(f"{name}.w", init)
        self.b = bag.add(f"{name}.b", np.zeros(d_out, dtype=ad.default_dtype())) if bias else None

    def __call__(self, x):
        return linear(x, self.w, self.b)


class LayerNorm:
    def __init__(self, bag, name, dim):
        self.gain = bag.add(f"{name}.gain", np.ones(dim, dtype=ad.default_dtype()))
        self.bias = bag.add(f"{name}.bias", np.zeros(dim, dtype=ad.default_dtype()))

    def __call__(self, x):
        return ad.layernorm(x, self.gain.value, self.bias.value)


def _split_heads(x, heads):
    b, t, d = x.shape
    dh = d // heads
    x = ad.reshape(x, (b, t, heads, dh))
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (b * heads, t, dh))


def _merge_heads(x, batch, heads):
    bh, t, dh = x.shape
    x = ad.reshape(x, (batch, heads, t, dh))
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (batch, t, heads * dh))


class Attention:
    """Multi-head attention; queries and keys/values may differ in length."""

    def __init__(self, bag, name, width, heads, rng):
        if width % heads:
            raise ValueError("width must be divisible by heads")
        self.heads = heads
        self.scale = 1.0 / math.sqrt(width // heads)
        self.wq = Linear(bag, f"{name}.q", width, width, rng)
        self.wk = Linear(bag, f"{name}.k", width, width, rng)
        self.wv = Linear(bag, f"{name}.v", width, width, rng)
        self.wo = Linear(bag, f"{name}.out", width, width, rng)

    def __call__(self, query, context):
        b = query.shape[0]
        q = _split_heads(self.wq(query), self.heads)
        k = _split_heads(self.wk(context), self.heads)
        v = _split_heads(self.wv(context), self.heads)
        mixed = ad.scaled_attention(q, k, v, self.scale)
        return self.wo(_merge_heads(mixed, b, self.heads))


class FeedForward:
    def __init__(self, bag, name, width, rng, expansion=4):
        self.up = Linear(bag, f"{name}.up", width, expansion * width, rng)
        self.down = Linear(bag, f"{name}.down", expansion * width, width, rng)

    def __call__(self, x):
        return self.down(ad.relu(self.up(x)))


class TransformerBlock:
    """Pre-norm residual block: self-attention, optional cross-attention, FFN."""

    def __init__(self, bag, name, width, heads, rng, cross=False):
        self.ln1 = LayerNorm(bag, f"{name}.ln1", width)
        self.attn = Attention(bag, f"{name}.attn", width, heads, rng)
        self.cross = None
        if cross:
            self.lnx = LayerNorm(bag, f"{name}.lnx", width)
            self.cross = Attention(bag, f"{name}.xattn", width, heads, rng)
        self.ln2 = LayerNorm(bag, f"{name}.ln2", width)
        self.ffn = FeedForward(bag, f"{name}.ffn", width, rng)

    def __call__(self, x, cond=None):
        h = self.ln1(x)
        x = ad.add(x, self.attn(h, h))
        if self.cross is not None and cond is not None:
            x = ad.add(x, self.cross(self.lnx(x), cond))
        x = ad.add(x, self.ffn(self.ln2(x)))
        return x


class Conv3:
    """3x3x3 stride-1 'same' convolution over (B, C, D, H, W)."""

    def __init__(self, bag, name, c_in, c_out, rng, kernel=3):
        fan_in = c_in * kernel**3
        self.w = bag.add(f"{name}.w", uniform_init(rng, (c_out, c_in) + (kernel,) * 3, fan_in))
        self.b = bag.add(f"{name}.b", np.zeros(c_out, dtype=ad.default_dtype()))
        self.pad = (kernel - 1) // 2

    def __call__(self, x):
        return ad.conv3d(x, self.w.value, self.b.value, pad=self.pad)


class ResBlock3d:
    """Residual unit: 3x3x3 mixing then a 1x1x1 channel projection."""

    def __init__(self, bag, name, channels, rng):
        self.c1 = Conv3(bag, f"{name}.c1", channels, channels, rng)
        self.c2 = Conv3(bag, f"{name}.c2", channels, channels, rng, kernel=1)

    def __call__(self, x):
        h = self.c2(ad.relu(self.c1(x)))
        return ad.relu(ad.add(x, h))


class Downsample3d:
    """Halve each spatial axis: fold 2-blocks into channels, then mix 1x1x1."""

    def __init__(self, bag, name, c_in, c_out, rng):
        self.mix = Conv3(bag, f"{name}.mix", c_in * 8, c_out, rng, kernel=1)

    def __call__(self, x):
        return ad.relu(self.mix(ad.space_to_depth(x, 2)))


class Upsample3d:
    """Double each spatial axis: mix 1x1x1 into 8x channels, then unfold."""

    def __init__(self, bag, name, c_in, c_out, rng):
        self.mix = Conv3(bag, f"{name}.mix", c_in, c_out * 8, rng, kernel=1)

    def __call__(self, x):
        return ad.relu(ad.depth_to_space(self.mix(x), 2))
