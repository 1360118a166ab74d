"""Quantitative evaluation: category accuracy of generated shapes and IoU.

A small frozen voxel classifier scores whether generated shapes land in the
sketch's category; the headline metric averages over several samples per
sketch. Ablation plans produce arm configs that differ in exactly one factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import affine, edge_map
from .autodiff import AdamConfig, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import TrainingError
from .layers import Conv3, Downsample3d, Linear, ParamBag, ResBlock3d
from .render import render
from .seeding import derive_rng
from .shapes import CATEGORIES


def iou(a, b):
    """Intersection over union of two occupancy grids; both-empty counts as 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"grid resolutions differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


class VoxelClassifier:
    """3D conv net mapping 32^3 occupancy to category logits."""

    def __init__(self, seed=0, classes=len(CATEGORIES)):
        self.bag = ParamBag()
        rng = derive_rng(seed, "voxclf", "init")
        self.trunk = [
            Downsample3d(self.bag, "down1", 1, 16, rng),
            ResBlock3d(self.bag, "res1", 16, rng),
            Downsample3d(self.bag, "down2", 16, 32, rng),
            ResBlock3d(self.bag, "res2", 32, rng),
            Downsample3d(self.bag, "down3", 32, 64, rng),
        ]
        self.hidden = Linear(self.bag, "hidden", 64, 64, rng)
        self.out = Linear(self.bag, "out", 64, classes, rng)

    def forward(self, grids):
        x = Tensor(np.ascontiguousarray(grids, dtype=np.float32)[..., None])
        for layer in self.trunk:
            x = layer(x)
        pooled = ad.reduce_mean(ad.reshape(x, (x.shape[0], -1, 64)), axis=1)
        return self.out(ad.relu(self.hidden(pooled)))

    def predict_batch(self, grids):
        with ad.no_grad():
            logits = self.forward(grids).data
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        return logits.argmax(axis=1), probs

    def checksum(self):
        return self.bag.checksum()

    def save(self, path):
        save_checkpoint(path, self.bag.state_dict())

    @classmethod
    def load(cls, path):
        clf = cls()
        clf.bag.load_state_dict(load_checkpoint(path))
        return clf


def classifier_test_accuracy(classifier, corpus, split="test"):
    records = corpus.split(split)
    correct = 0
    for start in range(0, len(records), 16):
        chunk = records[start : start + 16]
        grids = np.stack([corpus.load_grid(r) for r in chunk])
        pred, _ = classifier.predict_batch(grids)
        correct += int((pred == np.array([r.category_id for r in chunk])).sum())
    return correct / len(records)


def train_classifier(
    corpus, seed=0, epochs=8, batch_size=16, learning_rate=1e-3, floor=0.95, log=None
):
    """Fit the category classifier on ground-truth shapes, then freeze it."""
    clf = VoxelClassifier(seed=seed)
    adam = AdamConfig(learning_rate=learning_rate)
    records = corpus.split("train")
    grids = np.stack([corpus.load_grid(r) for r in records])
    labels = np.array([r.category_id for r in records])
    for epoch in range(epochs):
        rng = derive_rng(seed, "voxclf", "epoch", epoch)
        order = rng.permutation(len(records))
        for start in range(0, len(order), batch_size):
            picks = order[start : start + batch_size]
            logits = clf.forward(grids[picks])
            loss = ad.masked_cross_entropy(
                logits, labels[picks], np.ones(len(picks), dtype=bool)
            )
            if not np.isfinite(loss.data):
                raise TrainingError("classifier training diverged")
            loss.backward()
            clf.bag.step_all(adam)
        if log:
            log(f"voxclf epoch {epoch}: loss {float(loss.data):.4f}")
    accuracy = classifier_test_accuracy(clf, corpus, "val")
    if accuracy < floor:
        raise TrainingError(
            f"classifier validation accuracy {accuracy:.3f} below floor {floor}"
        )
    return clf, accuracy


# -- sketch evaluation sets ---------------------------------------------------

HEAVY_JITTER = {"rotation": math.radians(25.0), "translation": 0.12, "scale": (0.8, 1.2)}


@dataclass(frozen=True)
class EvalSketch:
    image: np.ndarray
    category_id: int
    shape_id: str
    seed: int


def build_sketch_eval_set(corpus, split="test", seed=0, jitter=False, limit=None):
    """Edge-map sketches of held-out shapes, one per record, seeded views."""
    records = corpus.split(split)
    if limit:
        records = records[:limit]
    out = []
    for r in records:
        rng = derive_rng(seed, "evalsketch", r.shape_id)
        view = corpus.views[rng.integers(len(corpus.views))]
        img = render(corpus.load_grid(r), view)
        sketch = edge_map(img)
        if jitter:
            sketch = affine(
                sketch,
                rotation=rng.uniform(-HEAVY_JITTER["rotation"], HEAVY_JITTER["rotation"]),
                translation=tuple(
                    rng.uniform(-HEAVY_JITTER["translation"], HEAVY_JITTER["translation"]) * 64
                    for _ in range(2)
                ),
                scale=rng.uniform(*HEAVY_JITTER["scale"]),
            )
        out.append(EvalSketch(sketch, r.category_id, r.shape_id, int(seed)))
    return out


def classifier_accuracy(sketches, generate_fn, classifier, k=5, seed=0, collect_iou=None):
    """Mean over all (sketch, sample) pairs of category agreement.

    ``generate_fn(image, k, seed) -> list of grids`` abstracts the pipeline so
    oracles and degenerate baselines plug in for verification. Order of
    sketches does not change the result (each sketch gets its own seed key).
    """
    per_category = {i: [] for i in range(len(CATEGORIES))}
    hits = []
    for sk in sketches:
        sample_seed = int(derive_rng(seed, "eval", sk.shape_id).integers(2**31))
        grids = generate_fn(sk.image, k, sample_seed)
        pred, _ = classifier.predict_batch(np.stack(grids))
        match = (pred == sk.category_id).astype(float)
        hits.extend(match.tolist())
        per_category[sk.category_id].extend(match.tolist())
        if collect_iou is not None:
            collect_iou(sk, grids)
    per_cat = {
        CATEGORIES[i]: (float(np.mean(v)) if v else None) for i, v in per_category.items()
    }
    return float(np.mean(hits)), per_cat


@dataclass
class EvalReport:
    name: str
    accuracy: float
    per_category: dict
    iou_mean: float | None
    fingerprint: str
    seed: int
    samples_per_sketch: int
    sketch_count: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "accuracy": self.accuracy,
            "per_category": self.per_category,
            "iou_mean": self.iou_mean,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "samples_per_sketch": self.samples_per_sketch,
            "sketch_count": self.sketch_count,
            "extra": self.extra,
        }

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{self.name}.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        (directory / f"{self.name}.txt").write_text(self.table() + "\n")

    def table(self):
        lines = [
            f"report: {self.name}",
            f"fingerprint: {self.fingerprint}  seed: {self.seed}",
            f"sketches: {self.sketch_count}  samples/sketch: {self.samples_per_sketch}",
            f"accuracy: {self.accuracy:.4f}",
        ]
        if self.iou_mean is not None:
            lines.append(f"iou_mean: {self.iou_mean:.4f}")
        lines.append("per-category accuracy:")
        for name, value in self.per_category.items():
            shown = "n/a" if value is None else f"{value:.4f}"
            lines.append(f"  {name:10s} {shown}")
        return "\n".join(lines)


# -- ablations ---------------------------------------------------------------

ABLATION_VARIANTS = (
    "global-vs-grid",
    "cfg-on-off",
    "layer-sweep",
    "mapping-depth",
    "attention",
    "augmentation",
)


def plan_ablation(variant, base_config):
    """Arm configurations for a controlled comparison.

    Every arm starts from ``base_config`` and overrides exactly the factor
    the variant studies (verified by the config-diff test). Arms that only
    change decoding (guidance scale) reuse the same trained model.
    """
    base = base_config.to_dict()

    def arm(name, **dotted):
        return {"name": name, "overrides": dotted}

    if variant == "global-vs-grid":
        return [arm("grid", **{"provider.mode": "grid"}),
                arm("global", **{"provider.mode": "global"})]
    if variant == "cfg-on-off":
        return [arm("cfg0", **{"decode.scale": 0.0}),
                arm("cfg3", **{"decode.scale": 3.0})]
    if variant == "layer-sweep":
        return [arm(f"layer{i}", **{"provider.layer": i}) for i in (1, 2, 3, 4)]
    if variant == "mapping-depth":
        return [arm(f"mlp{m}", **{"stage2.mapping_layers": m}) for m in (0, 1, 2, 3)]
    if variant == "attention":
        return [arm(att, **{"stage2.attention": att})
                for att in ("cross", "cross-nopos", "self")]
    if variant == "augmentation":
        return [arm(names if names != "" else "none", **{"augment.names": names})
                for names in ("none", "affine", "color", "canny", "all")]
    raise ValueError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")


def config_diff(a, b):
    """Flat dotted keys whose values differ between two config dicts."""
    out = []

    def walk(x, y, prefix=""):
        for key in x:
            if isinstance(x[key], dict):
                walk(x[key], y[key], f"{prefix}{key}.")
            elif x[key] != y[key]:
                out.append(f"{prefix}{key}")

    walk(a, b)
    return sorted(out)
