"""Corpus assembly: labeled shapes, deterministic splits, manifest files.

A corpus directory holds one voxel file per shape plus ``manifest.tsv`` with
columns (shape id, category id, seed, split, relative path). Rebuilding with
the same seed reproduces the manifest byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import render as render_mod
from .seeding import derive_rng, derive_seed
from .shapes import CATEGORIES, CATEGORY_IDS, generate_shape
from .voxels import load_voxels, save_voxels

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ShapeRecord:
    shape_id: str
    category: str
    seed: int
    split: str
    path: str

    @property
    def category_id(self):
        return CATEGORY_IDS[self.category]


class Corpus:
    """Manifest-backed view of a corpus directory; grids load lazily."""

    def __init__(self, root, records):
        self.root = Path(root)
        self.records = list(records)
        self.views = render_mod.canonical_views()

    def split(self, name):
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def load_grid(self, record):
        return load_voxels(self.root / record.path)

    def __len__(self):
        return len(self.records)


def _split_assignment(count, corpus_seed, category):
    n_val = count // 10
    n_test = count // 10
    order = derive_rng(corpus_seed, "split", category).permutation(count)
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < count - n_val - n_test:
            assignment[int(idx)] = "train"
        elif rank < count - n_test:
            assignment[int(idx)] = "val"
        else:
            assignment[int(idx)] = "test"
    return assignment


def build_corpus(per_category, seed, root):
    """Generate per_category shapes for every category and persist them."""
    if per_category < 10:
        raise ValueError("per_category must be at least 10 for a 80/10/10 split")
    root = Path(root)
    (root / "voxels").mkdir(parents=True, exist_ok=True)
    records = []
    for category in CATEGORIES:
        assignment = _split_assignment(per_category, seed, category)
        for i in range(per_category):
            shape_seed = derive_seed(seed, "corpus", category, i)
            grid, _ = generate_shape(category, shape_seed)
            shape_id = f"{category}_{i:05d}"
            rel = f"voxels/{shape_id}.svox"
            save_voxels(grid, root / rel)
            records.append(
                ShapeRecord(shape_id, category, shape_seed, assignment[i], rel)
            )
    records.sort(key=lambda r: r.shape_id)
    write_manifest(root / "manifest.tsv", records)
    return Corpus(root, records)


def write_manifest(path, records):
    lines = ["shape_id\tcategory_id\tseed\tsplit\tpath"]
    lines.extend(
        f"{r.shape_id}\t{r.category_id}\t{r.seed}\t{r.split}\t{r.path}"
        for r in records
    )
    Path(path).write_text("\n".join(lines) + "\n")


def load_corpus(root):
    root = Path(root)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest at {manifest}")
    records = []
    lines = manifest.read_text().splitlines()
    for line in lines[1:]:
        shape_id, category_id, seed, split, path = line.split("\t")
        records.append(
            ShapeRecord(shape_id, CATEGORIES[int(category_id)], int(seed), split, path)
        )
    return Corpus(root, records)


def category_counts(corpus, split=None):
    recs = corpus.records if split is None else corpus.split(split)
    counts = dict.fromkeys(CATEGORIES, 0)
    for r in recs:
        counts[r.category] += 1
    return counts
