"""What the augmentations do: affine jitter, intensity jitter, and the edge
extractor that manufactures the sketch domain from a shaded render.

    python3 demos/02_sketch_augmentations.py [out_dir]
"""

import math
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from voxsketch.augment import AugmentSpec, affine, apply, edge_map, intensity_jitter
from voxsketch.render import ViewSpec, render
from voxsketch.seeding import derive_rng
from voxsketch.shapes import generate_shape

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out")
out.mkdir(parents=True, exist_ok=True)

grid, _ = generate_shape("table", seed=3)
base = render(grid, ViewSpec(math.pi / 4, math.pi / 6, "shaded"))

panels = [
    ("render", base),
    ("affine", affine(base, rotation=0.3, translation=(4, -5), scale=1.1)),
    ("intensity", intensity_jitter(base, 1.25, -0.1)),
    ("edge map", edge_map(base)),
    ("edges of affine", edge_map(affine(base, rotation=-0.25, scale=0.9))),
    ("full pipeline", apply(AugmentSpec.from_names("all"), base, derive_rng(5, "demo"))),
]
fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.4))
for ax, (title, img) in zip(axes, panels):
    ax.imshow(img, cmap="gray", vmin=0, vmax=1)
    ax.set_title(title, fontsize=10)
    ax.set_xticks([])
    ax.set_yticks([])
fig.tight_layout()
fig.savefig(out / "augmentations.png", dpi=120)
print(f"panel -> {out / 'augmentations.png'}")
