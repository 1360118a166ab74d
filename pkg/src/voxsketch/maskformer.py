"""Stage 2: bidirectional transformer over masked token sequences.

Token sequences from stage 1 are partially replaced by a MASK symbol; the
model predicts the original tokens conditioned, through cross-attention, on a
frozen image-feature sequence passed through a small mapping network. A
learned null sequence substitutes for the features a small fraction of steps
so inference can contrast conditional with unconditional predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import AdamConfig, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import TrainingError
from .layers import LayerNorm, Linear, ParamBag, TransformerBlock
from .render import render
from .seeding import derive_rng

ATTENTION_VARIANTS = ("cross", "cross-nopos", "self")


@dataclass(frozen=True)
class MaskFormerConfig:
    tokens: int = 512
    vocab: int = 512
    width: int = 256
    blocks: int = 8
    heads: int = 8
    mapping_layers: int = 2
    cond_dim: int = 64
    cond_length: int = 64
    null_prob: float = 0.05
    attention: str = "cross"
    batch_size: int = 16
    learning_rate: float = 1e-4
    epochs: int = 250

    def __post_init__(self):
        if self.attention not in ATTENTION_VARIANTS:
            raise ValueError(f"attention must be one of {ATTENTION_VARIANTS}")

    @property
    def mask_id(self):
        return self.vocab


def cosine_fraction(r):
    """Fraction of positions still masked at progress r in [0, 1]."""
    return math.cos(math.pi * r / 2.0)


def mask_count(ratio, tokens):
    # the 1e-9 guard keeps cos(pi/2) floating-point dust from ceiling to 1
    return max(0, math.ceil(cosine_fraction(ratio) * tokens - 1e-9))


def mask_tokens(tokens, ratio, rng, mask_id):
    """Replace ceil(cos(pi*r/2) * len) positions by MASK, chosen uniformly.

    Returns (masked sequence, mask flags); flag is true exactly where the
    MASK id was written. ratio=0 masks everything, ratio=1 masks nothing.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("mask ratio must lie in [0, 1]")
    tokens = np.asarray(tokens)
    n = tokens.shape[-1]
    count = mask_count(ratio, n)
    flags = np.zeros(n, dtype=bool)
    if count:
        flags[rng.choice(n, size=count, replace=False)] = True
    return np.where(flags, np.int64(mask_id), tokens), flags


class MaskFormer:
    def __init__(self, config=MaskFormerConfig(), seed=0):
        self.config = config
        self.bag = ParamBag()
        rng = derive_rng(seed, "maskformer", "init")
        c = config
        self.token_embed = self.bag.add(
            "token_embed", ad.uniform_init(rng, (c.vocab + 1, c.width), c.width)
        )
        self.pos = self.bag.add(
            "pos", ad.uniform_init(rng, (c.tokens, c.width), c.width)
        )
        self.cond_pos = self.bag.add(
            "cond_pos", ad.uniform_init(rng, (c.cond_length, c.width), c.width)
        )
        self.null_embed = self.bag.add(
            "null_embed", ad.uniform_init(rng, (c.cond_length, c.width), c.width)
        )
        self.mapping = [Linear(self.bag, "map.proj", c.cond_dim, c.width, rng)]
        self.mapping += [
            Linear(self.bag, f"map.mlp{i}", c.width, c.width, rng)
            for i in range(c.mapping_layers)
        ]
        cross = c.attention in ("cross", "cross-nopos")
        self.blocks = [
            TransformerBlock(self.bag, f"block{i}", c.width, c.heads, rng, cross=cross)
            for i in range(c.blocks)
        ]
        self.final_ln = LayerNorm(self.bag, "final_ln", c.width)
        # zero head: predictions start exactly uniform (loss = ln vocab)
        self.head = Linear(self.bag, "head", c.width, c.vocab, rng, zero_init=True)

    # -- conditioning ---------------------------------------------------

    def map_features(self, features):
        """(B, L, cond_dim) frozen features -> (B, L, width) tensor sequence.

        The mapping network is applied per position; learnable positional
        embeddings are added afterwards unless the variant disables them.
        """
        c = self.config
        features = np.asarray(features, dtype=ad.default_dtype())
        if features.ndim == 2:
            features = features[None]
        if features.shape[1] != c.cond_length or features.shape[2] != c.cond_dim:
            raise ValueError(
                f"conditioning must be (B, {c.cond_length}, {c.cond_dim}),"
                f" got {features.shape}"
            )
        x = self.mapping[0](Tensor(features))
        for layer in self.mapping[1:]:
            x = layer(ad.relu(x))
        if c.attention != "cross-nopos":
            x = ad.add(x, self.cond_pos.value)
        return x

    def cond_sequence(self, features, null_flags):
        """Mix mapped features with the learned null sequence per batch row."""
        b = len(null_flags)
        null_flags = np.asarray(null_flags, dtype=bool)
        nul = ad.reshape(self.null_embed.value, (1,) + self.null_embed.data.shape)
        if features is None or null_flags.all():
            zeros = np.zeros((b, 1, 1), dtype=ad.default_dtype())
            return ad.add(nul, Tensor(zeros))  # broadcast to (B, L, W)
        mapped = self.map_features(features)
        pick = null_flags.astype(ad.default_dtype()).reshape(b, 1, 1)
        return ad.add(
            ad.mul(mapped, Tensor(1.0 - pick)), ad.mul(nul, Tensor(pick))
        )

    # -- forward ----------------------------------------------------------

    def forward(self, masked_tokens, cond):
        """Logits (B, tokens, vocab) for a batch of masked sequences.

        ``masked_tokens`` uses the MASK id at masked positions; ``cond`` is a
        (B, L, width) tensor from :meth:`cond_sequence`.
        """
        c = self.config
        masked_tokens = np.asarray(masked_tokens)
        if masked_tokens.ndim == 1:
            masked_tokens = masked_tokens[None]
        if masked_tokens.max() > c.mask_id or masked_tokens.min() < 0:
            raise ValueError("token id out of range")
        x = ad.add(ad.embedding(self.token_embed.value, masked_tokens), self.pos.value)
        if c.attention == "self":
            x = ad.concat([x, cond], axis=1)
            for block in self.blocks:
                x = block(x)
            x = _take_leading(x, c.tokens)
        else:
            for block in self.blocks:
                x = block(x, cond)
        return self.head(self.final_ln(x))

    def logits(self, masked_tokens, features=None, null_flags=None):
        """Inference helper: numpy logits without building a graph."""
        masked_tokens = np.asarray(masked_tokens)
        if masked_tokens.ndim == 1:
            masked_tokens = masked_tokens[None]
        b = masked_tokens.shape[0]
        if null_flags is None:
            null_flags = np.zeros(b, dtype=bool) if features is not None else np.ones(b, dtype=bool)
        with ad.no_grad():
            cond = self.cond_sequence(features, null_flags)
            return self.forward(masked_tokens, cond).data

    # -- persistence -------------------------------------------------------

    def state_dict(self):
        return self.bag.state_dict()

    def save(self, path):
        save_checkpoint(path, self.bag.state_dict())

    @classmethod
    def load(cls, path, config=MaskFormerConfig()):
        model = cls(config)
        model.bag.load_state_dict(load_checkpoint(path))
        return model

    def checksum(self):
        return self.bag.checksum()


def _take_leading(x, count):
    """First ``count`` rows along axis 1 (graph-aware slice)."""

    def backward(g):
        pad = np.zeros(
            (g.shape[0], x.shape[1] - count, g.shape[2]), dtype=g.dtype
        )
        return (np.concatenate([g, pad], axis=1),)

    return ad._node(x.data[:, :count], (x,), backward)


def masked_batch(token_rows, ratios, rng, mask_id, min_masked=1):
    """Vector化 masking for a batch; counts are clamped to at least one."""
    b, n = token_rows.shape
    masked = token_rows.copy()
    flags = np.zeros((b, n), dtype=bool)
    for i in range(b):
        count = max(min_masked, mask_count(ratios[i], n))
        pos = rng.choice(n, size=count, replace=False)
        flags[i, pos] = True
        masked[i, pos] = mask_id
    return masked, flags


def stage2_loss(model, token_rows, flags, cond):
    logits = model.forward(np.where(flags, model.config.mask_id, token_rows), cond)
    flat = ad.reshape(logits, (-1, model.config.vocab))
    return ad.masked_cross_entropy(flat, token_rows.reshape(-1), flags.reshape(-1))


def train_stage2(
    corpus,
    stage1,
    provider,
    config=MaskFormerConfig(),
    seed=0,
    epochs=None,
    augment_spec=None,
    log=None,
):
    """Train the masked-token model; stage 1 and the provider stay frozen.

    Per sample and step: draw one of the 24 views, render, augment, encode
    with the frozen provider, draw a mask ratio uniformly, mask through the
    cosine curve, and score masked positions only. The conditioning sequence
    is swapped for the learned null sequence with the configured probability.
    """
    from .augment import AugmentSpec, apply as apply_augment

    epochs = config.epochs if epochs is None else epochs
    augment_spec = augment_spec or AugmentSpec()
    model = MaskFormer(config, seed=seed)
    adam = AdamConfig(learning_rate=config.learning_rate)
    records = corpus.split("train")
    if not records:
        raise TrainingError("corpus has no training shapes")

    provider_sum_before = provider.checksum()
    stage1_sum_before = stage1.checksum()

    grids = np.stack([corpus.load_grid(r) for r in records])
    token_cache = np.concatenate(
        [stage1.encode_batch(grids[i : i + 16]) for i in range(0, len(grids), 16)]
    )
    views = corpus.views
    history = {"epoch_loss": [], "null_draws": 0, "cond_draws": 0}
    for epoch in range(epochs):
        rng = derive_rng(seed, "stage2", "epoch", epoch)
        order = rng.permutation(len(records))
        losses = []
        for start in range(0, len(order), config.batch_size):
            picks = order[start : start + config.batch_size]
            images = []
            for j in picks:
                view = views[rng.integers(len(views))]
                img = render(grids[j], view)
                img = apply_augment(
                    augment_spec, img,
                    derive_rng(seed, "stage2", "aug", epoch, records[j].shape_id),
                )
                images.append(img)
            features = provider.encode_batch(np.stack(images))
            rows = token_cache[picks]
            ratios = rng.random(len(picks))
            masked, flags = masked_batch(rows, ratios, rng, config.mask_id)
            null_flags = rng.random(len(picks)) < config.null_prob
            history["null_draws"] += int(null_flags.sum())
            history["cond_draws"] += len(picks)
            cond = model.cond_sequence(features, null_flags)
            loss = stage2_loss(model, rows, flags, cond)
            if not np.isfinite(loss.data):
                raise TrainingError(f"stage-2 loss diverged at epoch {epoch}")
            loss.backward()
            model.bag.step_all(adam)
            losses.append(float(loss.data))
        history["epoch_loss"].append(float(np.mean(losses)))
        if log:
            log(f"stage2 epoch {epoch}: loss {history['epoch_loss'][-1]:.4f}")

    if provider.checksum() != provider_sum_before:
        raise TrainingError("frozen feature provider changed during stage 2")
    if stage1.checksum() != stage1_sum_before:
        raise TrainingError("stage-1 weights changed during stage 2")
    history["null_fraction"] = (
        history["null_draws"] / history["cond_draws"] if history["cond_draws"] else 0.0
    )
    return model, history


def desk_config(**overrides):
    """Small config for laptop-scale runs; paper-scale fields stay default."""
    base = MaskFormerConfig(width=128, blocks=4, heads=4, epochs=40)
    return replace(base, **overrides)
