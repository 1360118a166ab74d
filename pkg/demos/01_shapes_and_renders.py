"""Tour of the shape corpus: generate one shape per category, render it from
a few views in both styles, and save a contact sheet plus a mesh export.

    python3 demos/01_shapes_and_renders.py [out_dir]
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from voxsketch.render import ViewSpec, canonical_views, render
from voxsketch.shapes import CATEGORIES, generate_shape
from voxsketch.voxels import export_mesh

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out")
out.mkdir(parents=True, exist_ok=True)

views = [canonical_views()[1], canonical_views()[12], canonical_views()[19]]
fig, axes = plt.subplots(len(CATEGORIES), 2 * len(views), figsize=(14, 18))
for row, category in enumerate(CATEGORIES):
    grid, params = generate_shape(category, seed=7)
    print(f"{category:10s} occupied={int(grid.sum()):6d} params={params}")
    for col, view in enumerate(views):
        shaded = render(grid, view)
        sil = render(grid, ViewSpec(view.azimuth, view.elevation, "silhouette"))
        axes[row, 2 * col].imshow(shaded, cmap="gray", vmin=0, vmax=1)
        axes[row, 2 * col + 1].imshow(sil, cmap="gray", vmin=0, vmax=1)
        axes[row, 2 * col].set_ylabel(category) if col == 0 else None
for ax in axes.ravel():
    ax.set_xticks([])
    ax.set_yticks([])
fig.suptitle("shaded and silhouette renders across views")
fig.tight_layout()
fig.savefig(out / "shapes_and_renders.png", dpi=110)
print(f"contact sheet -> {out / 'shapes_and_renders.png'}")

grid, _ = generate_shape("chair", seed=7)
nv, nf = export_mesh(grid, out / "chair.obj")
print(f"mesh export -> {out / 'chair.obj'} ({nv} vertices, {nf} triangles)")
