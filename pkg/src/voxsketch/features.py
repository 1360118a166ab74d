"""Frozen image encoder and the feature-provider contract.

The built-in encoder is a small patch-token transformer pretrained on shape
renders for category classification and then locked. Downstream conditioning
consumes either its per-patch feature grid at a chosen depth or its pooled
projection vector. Externally computed grids can be imported from FGRD files
instead, so heavyweight backbones stay out of this package.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import AugmentSpec, apply as apply_augment
from .autodiff import AdamConfig, Tensor
from .checkpoint import FormatError, load_checkpoint, save_checkpoint
from .errors import TrainingError
from .layers import LayerNorm, Linear, ParamBag, TransformerBlock
from .render import render
from .seeding import derive_rng
from .shapes import CATEGORIES

FGRD_MAGIC = b"FGRD0001"


@dataclass(frozen=True)
class ToyEncoderConfig:
    image_size: int = 64
    patch: int = 8
    width: int = 64
    layers: int = 4
    heads: int = 4
    classes: int = len(CATEGORIES)
    edge_band_input: bool = True

    @property
    def grid(self):
        return self.image_size // self.patch

    @property
    def tokens(self):
        return self.grid * self.grid


def edge_band(images, threshold=0.05):
    """Fixed retina for the encoder: thick boundary bands.

    Gradient magnitude, binarized, then softened by a 3x3 box sum. Shaded
    renders and line drawings land in a similar representation under this
    transform, which is hard-coded (never trained) and therefore keeps the
    encoder's learned weights blind to the sketch domain.
    """
    p = np.pad(images, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = (p[:, 1:-1, 2:] - p[:, 1:-1, :-2]) / 2.0
    gy = (p[:, 2:, 1:-1] - p[:, :-2, 1:-1]) / 2.0
    band = (np.hypot(gx, gy) > threshold).astype(np.float32)
    bp = np.pad(band, ((0, 0), (1, 1), (1, 1)))
    h, w = images.shape[1:]
    out = np.zeros_like(band)
    for dy in range(3):
        for dx in range(3):
            out += bp[:, dy : dy + h, dx : dx + w]
    return np.clip(out / 4.0, 0.0, 1.0)


class ToyEncoder:
    """Patch-token transformer with a classification head used only to pretrain."""

    def __init__(self, config=ToyEncoderConfig(), seed=0):
        self.config = config
        self.bag = ParamBag()
        rng = derive_rng(seed, "toyenc", "init")
        c = config
        self.patch_embed = Linear(self.bag, "patch", c.patch * c.patch, c.width, rng)
        self.pos = self.bag.add(
            "pos", 0.02 * rng.standard_normal((c.tokens, c.width)).astype(ad.default_dtype())
        )
        self.blocks = [
            TransformerBlock(self.bag, f"block{i}", c.width, c.heads, rng)
            for i in range(c.layers)
        ]
        self.final_ln = LayerNorm(self.bag, "final_ln", c.width)
        self.proj = Linear(self.bag, "proj", c.width, c.width, rng)
        self.cls = Linear(self.bag, "cls", c.width, c.classes, rng)
        self.frozen = False
        self._checksum = None

    def _patchify(self, images):
        c = self.config
        images = np.ascontiguousarray(images, dtype=ad.default_dtype())
        if c.edge_band_input:
            images = edge_band(images)
        b = images.shape[0]
        g, p = c.grid, c.patch
        x = images.reshape(b, g, p, g, p).transpose(0, 1, 3, 2, 4)
        return np.ascontiguousarray(x).reshape(b, c.tokens, p * p)

    def token_stack(self, images):
        """Token tensors after each block for a (B, H, W) image batch."""
        x = ad.add(self.patch_embed(Tensor(self._patchify(images))), self.pos.value)
        stack = []
        for block in self.blocks:
            x = block(x)
            stack.append(x)
        return stack

    def global_vector(self, images_or_stack):
        stack = (
            images_or_stack
            if isinstance(images_or_stack, list)
            else self.token_stack(images_or_stack)
        )
        pooled = ad.reduce_mean(self.final_ln(stack[-1]), axis=1)
        return self.proj(pooled)

    def classify(self, images):
        return self.cls(self.global_vector(images))

    # -- frozen inference -------------------------------------------------

    def freeze(self):
        self.frozen = True
        self._checksum = self.bag.checksum()
        return self

    def checksum(self):
        return self.bag.checksum()

    def assert_unchanged(self):
        if not self.frozen:
            raise RuntimeError("encoder was never frozen")
        if self.bag.checksum() != self._checksum:
            raise RuntimeError("frozen encoder weights changed")

    def encode_grid(self, images, layer):
        """(B, g, g, width) float32 features from the chosen block, 1-indexed."""
        if not 1 <= layer <= self.config.layers:
            raise ValueError(
                f"layer must lie in [1, {self.config.layers}], got {layer}"
            )
        g = self.config.grid
        with ad.no_grad():
            tokens = self.token_stack(images)[layer - 1].data
        return tokens.reshape(tokens.shape[0], g, g, self.config.width)

    def encode_global(self, images):
        with ad.no_grad():
            return self.global_vector(images).data

    def state_dict(self):
        return self.bag.state_dict()

    def load_state_dict(self, state):
        self.bag.load_state_dict(state)
        return self

    def save(self, path):
        save_checkpoint(path, self.bag.state_dict())

    @classmethod
    def load(cls, path, config=ToyEncoderConfig()):
        enc = cls(config)
        enc.load_state_dict(load_checkpoint(path))
        return enc.freeze()


# -- providers ------------------------------------------------------------


class ToyFeatureProvider:
    """Feature source backed by the frozen built-in encoder."""

    def __init__(self, encoder, layer=None, mode="grid"):
        if mode not in ("grid", "global"):
            raise ValueError(f"mode must be 'grid' or 'global', got {mode!r}")
        self.encoder = encoder
        self.layer = layer if layer is not None else encoder.config.layers
        self.mode = mode
        if not 1 <= self.layer <= encoder.config.layers:
            raise ValueError(
                f"layer must lie in [1, {encoder.config.layers}], got {self.layer}"
            )

    @property
    def dim(self):
        return self.encoder.config.width

    @property
    def sequence_length(self):
        return self.encoder.config.tokens if self.mode == "grid" else 1

    def checksum(self):
        return self.encoder.checksum()

    def encode_batch(self, images):
        """(B, L, dim) conditioning sequences for a (B, H, W) image batch."""
        if self.mode == "grid":
            grids = self.encoder.encode_grid(images, self.layer)
            return grids.reshape(grids.shape[0], -1, self.dim)
        vecs = self.encoder.encode_global(images)
        return vecs.reshape(vecs.shape[0], 1, self.dim)

    def encode(self, image):
        return self.encode_batch(image[None])[0]


class FileFeatureProvider:
    """Feature source reading precomputed FGRD grids from a directory."""

    def __init__(self, directory, dim=64):
        self.directory = Path(directory)
        self.dim = dim
        self.mode = "grid"
        if not self.directory.is_dir():
            raise FileNotFoundError(f"feature directory {directory} does not exist")

    def load(self, stem):
        grid = load_feature_grid(self.directory / f"{stem}.fgrd")
        if grid.shape[-1] != self.dim:
            raise FormatError(
                f"feature file dim {grid.shape[-1]} does not match provider dim {self.dim}"
            )
        return grid.reshape(1, -1, self.dim)[0]

    def checksum(self):
        return f"files:{self.directory}"


# -- FGRD files -------------------------------------------------------------


def save_feature_grid(path, grid):
    grid = np.ascontiguousarray(grid, dtype="<f4")
    if grid.ndim != 3:
        raise ValueError("feature grid must be (g, g, d)")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FGRD_MAGIC)
        fh.write(struct.pack("<3I", *grid.shape))
        fh.write(grid.tobytes())


def load_feature_grid(path):
    with open(path, "rb") as fh:
        if fh.read(len(FGRD_MAGIC)) != FGRD_MAGIC:
            raise FormatError(f"{path}: bad feature-grid magic")
        header = fh.read(12)
        if len(header) != 12:
            raise FormatError(f"{path}: truncated feature-grid header")
        shape = struct.unpack("<3I", header)
        payload = fh.read(4 * int(np.prod(shape)))
        if len(payload) != 4 * int(np.prod(shape)):
            raise FormatError(f"{path}: payload shorter than declared dims {shape}")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


# -- pretraining ------------------------------------------------------------

PRETRAIN_AUGMENT = AugmentSpec(enable_affine=True, enable_intensity=True)


def _render_record(corpus, record, view):
    return render(corpus.load_grid(record), view)


def validation_accuracy(encoder, corpus, seed):
    records = corpus.split("val")
    correct = 0
    for i in range(0, len(records), 64):
        chunk = records[i : i + 64]
        images = np.stack(
            [
                _render_record(
                    corpus, r,
                    corpus.views[derive_rng(seed, "toyenc", "valview", r.shape_id).integers(24)],
                )
                for r in chunk
            ]
        )
        with ad.no_grad():
            logits = encoder.classify(images).data
        pred = logits.argmax(axis=1)
        correct += int((pred == np.array([r.category_id for r in chunk])).sum())
    return correct / len(records)


def pretrain_toy_encoder(
    corpus,
    epochs=12,
    seed=0,
    config=ToyEncoderConfig(),
    batch_size=32,
    learning_rate=1e-3,
    accuracy_floor=0.90,
    log=None,
):
    """Train the encoder on render classification, verify the floor, freeze it.

    Renders are jittered (affine + intensity) during training; edge-style
    sketches are never shown, so the sketch domain stays strictly held out.
    """
    encoder = ToyEncoder(config, seed=seed)
    adam = AdamConfig(learning_rate=learning_rate)
    records = corpus.split("train")
    n_views = len(corpus.views)
    for epoch in range(epochs):
        rng = derive_rng(seed, "toyenc", "epoch", epoch)
        order = rng.permutation(len(records))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [records[j] for j in order[start : start + batch_size]]
            images, labels = [], []
            for r in batch:
                view = corpus.views[rng.integers(n_views)]
                img = _render_record(corpus, r, view)
                img = apply_augment(PRETRAIN_AUGMENT, img, derive_rng(seed, "toyenc", "aug", epoch, r.shape_id))
                images.append(img)
                labels.append(r.category_id)
            logits = encoder.classify(np.stack(images))
            loss = ad.masked_cross_entropy(
                logits, np.array(labels), np.ones(len(labels), dtype=bool)
            )
            if not np.isfinite(loss.data):
                raise TrainingError("encoder pretraining diverged (non-finite loss)")
            loss.backward()
            encoder.bag.step_all(adam)
            losses.append(float(loss.data))
        if log:
            log(f"toyenc epoch {epoch}: loss {np.mean(losses):.4f}")
    accuracy = validation_accuracy(encoder, corpus, seed)
    if accuracy < accuracy_floor:
        raise TrainingError(
            f"encoder validation accuracy {accuracy:.3f} below floor {accuracy_floor}"
        )
    encoder.freeze()
    return encoder, accuracy
