"""Iterative parallel decoding of token sequences from a single sketch.

Decoding starts fully masked and follows a cosine curve: at step t of T, only
floor(cos(pi*t/(2T)) * N) positions may remain masked. Each step samples
tokens at the masked positions, ranks them by confidence (log-probability
plus annealed Gumbel noise), keeps the quota, and re-masks the rest.
Conditional and null predictions are combined by guidance extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_rng


@dataclass
class DecodeConfig:
    steps: int = 15
    guidance_scale: float = 3.0
    temperature: float = 1.0
    samples: int = 5
    seed: int = 0
    deterministic: bool = False  # argmax tokens, no confidence noise

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.guidance_scale < 0:
            raise ValueError("guidance scale must be nonnegative")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")


@dataclass
class DecodeTrace:
    """Per-step record of the decode; union of acceptances covers every position."""

    masked_counts: list = field(default_factory=list)
    accepted_positions: list = field(default_factory=list)
    accepted_tokens: list = field(default_factory=list)

    def accepted_per_step(self):
        return [len(p) for p in self.accepted_positions]


def schedule(n, steps):
    """Masked-position quota after each step t=1..steps; ends at exactly 0."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    counts = [int(math.floor(math.cos(math.pi * t / (2 * steps)) * n)) for t in range(1, steps + 1)]
    counts[-1] = 0
    return counts


def cfg_logits(cond, uncond, scale):
    """uncond + scale * (cond - uncond); exact passthrough at scale 0 and 1."""
    cond = np.asarray(cond)
    uncond = np.asarray(uncond)
    if cond.shape != uncond.shape:
        raise ValueError(f"logit shapes differ: {cond.shape} vs {uncond.shape}")
    if scale == 0.0:
        return uncond.copy()
    if scale == 1.0:
        return cond.copy()
    return uncond + scale * (cond - uncond)


def _sample_rows(probs, rng):
    """One categorical draw per row via inverse CDF (single uniform per row)."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[:, -1] = 1.0  # guard against rounding short of one
    u = rng.random((probs.shape[0], 1))
    return (u > cdf).sum(axis=-1)


def decode_many(model, features, config, seeds):
    """Run one decode per seed in lockstep; identical to solo runs per seed.

    ``features`` is a single conditioning sequence (L, d) shared by all
    decodes (or None for unconditional generation). Returns (tokens (B, N),
    traces). Conditional and null forwards share one batched model call.
    """
    cfg = config
    n = model.config.tokens
    k = model.config.vocab
    mask_id = model.config.mask_id
    b = len(seeds)
    rngs = [derive_rng(s, "decode") for s in seeds]
    tokens = np.full((b, n), mask_id, dtype=np.int64)
    masked = np.ones((b, n), dtype=bool)
    traces = [DecodeTrace() for _ in range(b)]
    quotas = schedule(n, cfg.steps)

    feats = None if features is None else np.repeat(features[None], b, axis=0)
    for t, quota in enumerate(quotas, start=1):
        if feats is None:
            null_logits = model.logits(tokens, None)
            blended = null_logits
        else:
            stacked = np.concatenate([tokens, tokens])
            flags = np.concatenate([np.zeros(b, bool), np.ones(b, bool)])
            both = model.logits(stacked, np.concatenate([feats, feats]), flags)
            blended = cfg_logits(both[:b], both[b:], cfg.guidance_scale)
        anneal = cfg.temperature * (1.0 - t / cfg.steps)
        for i in range(b):
            rows = np.flatnonzero(masked[i])
            logits = blended[i, rows]
            shifted = logits - logits.max(axis=-1, keepdims=True)
            probs = np.exp(shifted)
            probs /= probs.sum(axis=-1, keepdims=True)
            if cfg.deterministic:
                drawn = probs.argmax(axis=-1)
            else:
                drawn = _sample_rows(probs, rngs[i])
            conf = np.log(probs[np.arange(len(rows)), drawn] + 1e-30)
            if not cfg.deterministic and anneal > 0:
                gumbel = -np.log(-np.log(rngs[i].random(len(rows)) + 1e-30) + 1e-30)
                conf = conf + anneal * gumbel
            accept = len(rows) - quota
            keep = np.argsort(-conf, kind="stable")[:accept]
            pos = rows[keep]
            tokens[i, pos] = drawn[keep]
            masked[i, pos] = False
            traces[i].masked_counts.append(int(masked[i].sum()))
            traces[i].accepted_positions.append(pos.tolist())
            traces[i].accepted_tokens.append(tokens[i, pos].tolist())
    assert not masked.any()
    return tokens, traces


def decode(model, features, config):
    """Single decode; returns (token sequence, trace)."""
    tokens, traces = decode_many(model, features, config, [config.seed])
    return tokens[0], traces[0]


def generate(sketch, provider, model, stage1, config):
    """Sketch image -> k voxel grids (encode once, decode k times, detokenize).

    Decode i uses seed ``config.seed + i`` so restarting with a different seed
    yields different shapes from the same sketch.
    """
    features = provider.encode(np.asarray(sketch, dtype=np.float32))
    seeds = [config.seed + i for i in range(config.samples)]
    tokens, traces = decode_many(model, features, config, seeds)
    grids = stage1.decode_token_batch(tokens)
    return list(grids), tokens, traces
