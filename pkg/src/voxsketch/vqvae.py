"""Stage 1: compress occupancy grids into discrete token sequences.

A strided 3D conv encoder maps 32^3 occupancy to an 8^3 field of latent
vectors, each snapped to its nearest dictionary entry (straight-through
gradient); a mirrored decoder reconstructs per-voxel occupancy logits. The
dictionary learns by exponential moving averages rather than gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamConfig, Tensor
from .checkpoint import FormatError, load_checkpoint, save_checkpoint
from .errors import TrainingError
from .layers import Conv3, Downsample3d, ParamBag, ResBlock3d, Upsample3d
from .seeding import derive_rng

TOKS_MAGIC = b"TOKS0001"


@dataclass(frozen=True)
class VqVaeConfig:
    codebook_size: int = 512
    dim: int = 64
    grid: int = 8
    resolution: int = 32
    beta: float = 0.25
    decay: float = 0.99
    eps_smooth: float = 1e-5
    channels: tuple = (16, 32)
    batch_size: int = 8
    learning_rate: float = 1e-4
    epochs: int = 300

    @property
    def tokens(self):
        return self.grid**3


class Codebook:
    """K x d dictionary with EMA counts and sums; entries = sums / counts."""

    def __init__(self, size, dim, decay=0.99, eps_smooth=1e-5):
        self.size = size
        self.dim = dim
        self.decay = decay
        self.eps_smooth = eps_smooth
        self.embeddings = np.zeros((size, dim), dtype=np.float32)
        self.ema_counts = np.ones(size, dtype=np.float32)
        self.ema_sums = np.zeros((size, dim), dtype=np.float32)
        self.initialized = False

    def init_from_latents(self, latents, rng):
        """Seed entries from observed encoder outputs (repeats if too few)."""
        picks = rng.choice(len(latents), size=self.size, replace=len(latents) < self.size)
        self.embeddings = latents[picks].astype(np.float32).copy()
        self.ema_counts = np.ones(self.size, dtype=np.float32)
        self.ema_sums = self.embeddings.copy()
        self.initialized = True

    def quantize(self, latents):
        """Nearest entry per latent under squared distance; first index wins ties."""
        if latents.ndim != 2 or latents.shape[1] != self.dim:
            raise ValueError(f"latents must be (N, {self.dim})")
        d2 = (
            (latents**2).sum(axis=1, keepdims=True)
            - 2.0 * latents @ self.embeddings.T
            + (self.embeddings**2).sum(axis=1)
        )
        indices = d2.argmin(axis=1)
        return indices, self.embeddings[indices]

    def ema_update(self, latents, indices):
        """Pull entries toward their assigned latents; no gradients involved.

        Arithmetic follows the accumulator dtype (float32 in training;
        float64 state can be substituted for oracle comparisons).
        """
        acc = self.ema_counts.dtype
        counts = np.bincount(indices, minlength=self.size).astype(acc)
        sums = np.zeros_like(self.ema_sums)
        np.add.at(sums, indices, latents.astype(sums.dtype))
        lam = self.decay
        self.ema_counts = lam * self.ema_counts + (1 - lam) * counts
        self.ema_sums = lam * self.ema_sums + (1 - lam) * sums
        self.embeddings = self.ema_sums / (self.ema_counts[:, None] + self.eps_smooth)

    def revive(self, dead_indices, latents, rng):
        """Reseed unused entries onto random observed latents."""
        if len(dead_indices) == 0 or len(latents) == 0:
            return
        picks = rng.choice(len(latents), size=len(dead_indices))
        chosen = latents[picks].astype(np.float32)
        self.embeddings[dead_indices] = chosen
        self.ema_counts[dead_indices] = 1.0
        self.ema_sums[dead_indices] = chosen

    def state_arrays(self, prefix="codebook"):
        return {
            f"{prefix}.embeddings": self.embeddings,
            f"{prefix}.ema_counts": self.ema_counts,
            f"{prefix}.ema_sums": self.ema_sums,
        }

    def load_state_arrays(self, state, prefix="codebook"):
        self.embeddings = state[f"{prefix}.embeddings"].astype(np.float32).copy()
        self.ema_counts = state[f"{prefix}.ema_counts"].astype(np.float32).copy()
        self.ema_sums = state[f"{prefix}.ema_sums"].astype(np.float32).copy()
        self.initialized = True


class VqVae:
    def __init__(self, config=VqVaeConfig(), seed=0):
        self.config = config
        self.bag = ParamBag()
        rng = derive_rng(seed, "vqvae", "init")
        c1, c2 = config.channels
        d = config.dim
        self.enc = [
            Downsample3d(self.bag, "enc.down1", 1, c1, rng),
            ResBlock3d(self.bag, "enc.res1", c1, rng),
            Downsample3d(self.bag, "enc.down2", c1, c2, rng),
            ResBlock3d(self.bag, "enc.res2", c2, rng),
            Conv3(self.bag, "enc.out", c2, d, rng),
        ]
        self.dec_in = Conv3(self.bag, "dec.in", d, c2, rng)
        self.dec = [
            ResBlock3d(self.bag, "dec.res1", c2, rng),
            Upsample3d(self.bag, "dec.up1", c2, c1, rng),
            ResBlock3d(self.bag, "dec.res2", c1, rng),
            Upsample3d(self.bag, "dec.up2", c1, 8, rng),
            Conv3(self.bag, "dec.out", 8, 1, rng, kernel=1),
        ]
        self.codebook = Codebook(
            config.codebook_size, d, config.decay, config.eps_smooth
        )

    # latent layout: token index = (z * grid + y) * grid + x, z slowest;
    # conv tensors are channels-last (B, X, Y, Z, C)
    def _to_sequence(self, spatial):
        b = spatial.shape[0]
        seq = ad.transpose(spatial, (0, 3, 2, 1, 4))
        return ad.reshape(seq, (b, self.config.tokens, self.config.dim))

    def _to_spatial(self, seq):
        b, g, d = seq.shape[0], self.config.grid, self.config.dim
        x = ad.reshape(seq, (b, g, g, g, d))
        return ad.transpose(x, (0, 3, 2, 1, 4))

    def encode_latents(self, grids):
        """(B, n, n, n) occupancy (bool or float) -> (B, tokens, dim) tensor."""
        x = Tensor(np.ascontiguousarray(grids, dtype=np.float32)[..., None])
        for layer in self.enc:
            x = layer(x)
        return self._to_sequence(x)

    def decode_logits(self, latent_seq):
        x = ad.relu(self.dec_in(self._to_spatial(latent_seq)))
        for layer in self.dec:
            x = layer(x)
        b = x.shape[0]
        n = self.config.resolution
        return ad.reshape(x, (b, n, n, n))

    def stage1_loss(self, grids):
        """Total, reconstruction, and commitment losses plus token assignments."""
        occ = np.ascontiguousarray(grids, dtype=np.float32)
        lat = self.encode_latents(occ)
        flat = lat.data.reshape(-1, self.config.dim)
        if not self.codebook.initialized:
            raise TrainingError("codebook must be initialized before the first loss")
        idx, quant = self.codebook.quantize(flat)
        quant = quant.reshape(lat.shape)
        # straight-through: decoder sees dictionary rows, encoder sees the
        # gradient as if quantization were the identity
        lat_q = ad.add(lat, ad.stopgrad(Tensor(quant) - lat))
        logits = self.decode_logits(lat_q)
        rec = ad.bce_with_logits(logits, occ)
        diff = lat - Tensor(quant)
        commit = ad.mul(ad.reduce_mean(ad.mul(diff, diff)), self.config.beta)
        total = ad.add(rec, commit)
        return total, rec, commit, idx, flat

    # -- frozen-model entry points ------------------------------------------

    def encode_shape(self, grid):
        return self.encode_batch(grid[None])[0]

    def encode_batch(self, grids):
        with ad.no_grad():
            lat = self.encode_latents(grids).data
        idx, _ = self.codebook.quantize(lat.reshape(-1, self.config.dim))
        return idx.reshape(grids.shape[0], self.config.tokens).astype(np.int64)

    def decode_tokens(self, tokens):
        return self.decode_token_batch(np.asarray(tokens)[None])[0]

    def decode_token_batch(self, tokens):
        tokens = np.asarray(tokens)
        if tokens.min() < 0 or tokens.max() >= self.config.codebook_size:
            raise ValueError("token index out of codebook range")
        vecs = self.codebook.embeddings[tokens]
        with ad.no_grad():
            logits = self.decode_logits(Tensor(vecs)).data
        return logits >= 0.0  # sigmoid(logit) >= 0.5

    # -- persistence ---------------------------------------------------------

    def state_dict(self):
        state = self.bag.state_dict()
        state.update(self.codebook.state_arrays())
        return state

    def load_state_dict(self, state):
        cb = {k: v for k, v in state.items() if k.startswith("codebook.")}
        rest = {k: v for k, v in state.items() if not k.startswith("codebook.")}
        self.bag.load_state_dict(rest)
        self.codebook.load_state_arrays(cb)
        return self

    def save(self, path):
        save_checkpoint(path, self.state_dict())

    @classmethod
    def load(cls, path, config=VqVaeConfig()):
        model = cls(config)
        model.load_state_dict(load_checkpoint(path))
        return model

    def checksum(self):
        import hashlib

        h = hashlib.sha256(self.bag.checksum().encode())
        h.update(self.codebook.embeddings.tobytes())
        return h.hexdigest()


def train_stage1(corpus, config=VqVaeConfig(), seed=0, epochs=None, log=None):
    """Train the autoencoder; returns (model, history).

    History carries per-epoch mean losses and the validation codebook
    utilization (fraction of dictionary entries used on the val split).
    """
    epochs = config.epochs if epochs is None else epochs
    model = VqVae(config, seed=seed)
    adam = AdamConfig(learning_rate=config.learning_rate)
    records = corpus.split("train")
    if not records:
        raise TrainingError("corpus has no training shapes")
    history = {"epoch_loss": [], "epoch_rec": [], "epoch_commit": []}

    grids = np.stack([corpus.load_grid(r) for r in records])
    for epoch in range(epochs):
        rng = derive_rng(seed, "stage1", "epoch", epoch)
        order = rng.permutation(len(records))
        seen_codes = np.zeros(config.codebook_size, dtype=bool)
        totals, recs, commits = [], [], []
        last_latents = None
        for start in range(0, len(order), config.batch_size):
            batch = grids[order[start : start + config.batch_size]]
            if not model.codebook.initialized:
                with ad.no_grad():
                    warm = model.encode_latents(batch).data.reshape(-1, config.dim)
                model.codebook.init_from_latents(warm, derive_rng(seed, "stage1", "cbinit"))
            total, rec, commit, idx, flat = model.stage1_loss(batch)
            if not np.isfinite(total.data):
                raise TrainingError(
                    f"stage-1 loss diverged at epoch {epoch} (rec={float(rec.data)!r},"
                    f" commit={float(commit.data)!r})"
                )
            total.backward()
            model.bag.step_all(adam)
            model.codebook.ema_update(flat, idx)
            seen_codes[np.unique(idx)] = True
            last_latents = flat
            totals.append(float(total.data))
            recs.append(float(rec.data))
            commits.append(float(commit.data))
        dead = np.flatnonzero(~seen_codes)
        model.codebook.revive(dead, last_latents, derive_rng(seed, "stage1", "revive", epoch))
        history["epoch_loss"].append(float(np.mean(totals)))
        history["epoch_rec"].append(float(np.mean(recs)))
        history["epoch_commit"].append(float(np.mean(commits)))
        if log:
            log(
                f"stage1 epoch {epoch}: loss {history['epoch_loss'][-1]:.5f}"
                f" rec {history['epoch_rec'][-1]:.5f} dead {len(dead)}"
            )

    history["val_utilization"] = codebook_utilization(model, corpus, "val")
    return model, history


def codebook_utilization(model, corpus, split="val"):
    used = set()
    records = corpus.split(split)
    for start in range(0, len(records), 16):
        chunk = records[start : start + 16]
        batch = np.stack([corpus.load_grid(r) for r in chunk])
        used.update(np.unique(model.encode_batch(batch)).tolist())
    return len(used) / model.config.codebook_size


def reconstruction_iou(model, corpus, split="val", batch_size=8):
    """Mean IoU of decode(encode(S)) against S over a split."""
    records = corpus.split(split)
    scores = []
    for start in range(0, len(records), batch_size):
        batch = np.stack([corpus.load_grid(r) for r in records[start : start + batch_size]])
        tokens = model.encode_batch(batch)
        recon = model.decode_token_batch(tokens)
        for truth, out in zip(batch, recon):
            union = np.count_nonzero(truth | out)
            inter = np.count_nonzero(truth & out)
            scores.append(1.0 if union == 0 else inter / union)
    return float(np.mean(scores))


def validation_loss(model, corpus, split="val", batch_size=8):
    records = corpus.split(split)
    losses = []
    for start in range(0, len(records), batch_size):
        batch = np.stack([corpus.load_grid(r) for r in records[start : start + batch_size]])
        with ad.no_grad():
            total, *_ = model.stage1_loss(batch)
        losses.append(float(total.data) * len(records[start : start + batch_size]))
    return sum(losses) / len(records)


# -- token files -------------------------------------------------------------


def save_tokens(path, tokens):
    tokens = np.asarray(tokens)
    if tokens.min() < 0 or tokens.max() >= 2**16:
        raise ValueError("token indices must fit uint16")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(TOKS_MAGIC)
        fh.write(struct.pack("<I", tokens.size))
        fh.write(tokens.astype("<u2").tobytes())


def load_tokens(path):
    with open(path, "rb") as fh:
        if fh.read(len(TOKS_MAGIC)) != TOKS_MAGIC:
            raise FormatError(f"{path}: bad token-file magic")
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError(f"{path}: truncated token header")
        (count,) = struct.unpack("<I", raw)
        payload = fh.read(2 * count)
        if len(payload) != 2 * count:
            raise FormatError(f"{path}: truncated token payload")
        return np.frombuffer(payload, dtype="<u2").astype(np.int64)
