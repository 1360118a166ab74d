"""End-to-end in miniature: build a tiny corpus, train both stages briefly,
then decode shapes from an edge-map sketch. Quality is deliberately rough;
this demo exists to show the moving parts in about two minutes.

    python3 demos/03_tiny_pipeline.py [out_dir]
"""

import sys
import tempfile
import time
from pathlib import Path

from voxsketch.config import parse_config
from voxsketch import pipeline as pl
from voxsketch.augment import edge_map
from voxsketch.render import render
from voxsketch.voxels import export_mesh, save_voxels

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out")
out.mkdir(parents=True, exist_ok=True)

config = parse_config(None, preset="desk", overrides={
    "corpus.per_category": 10,
    "provider.pretrain_epochs": 2,
    "provider.accuracy_floor": 0.0,
    "stage1.epochs": 2,
    "stage2.epochs": 2,
    "stage2.width": 32,
    "stage2.blocks": 2,
    "decode.samples": 3,
})

t0 = time.time()
with tempfile.TemporaryDirectory() as workdir:
    pipeline = pl.load_pipeline(config, workdir, build=True, classifier=False, log=print)
    record = pipeline.corpus.split("test")[0]
    sketch = edge_map(render(pipeline.corpus.load_grid(record), pipeline.corpus.views[13]))
    print(f"sketching a held-out {record.category} and decoding "
          f"{config.decode.samples} shapes...")
    grids, tokens, traces = pipeline.generate(sketch)
    for i, (grid, trace) in enumerate(zip(grids, traces)):
        save_voxels(grid, out / f"tiny_sample{i}.svox")
        export_mesh(grid, out / f"tiny_sample{i}.obj")
        print(f"  sample {i}: {int(grid.sum())} voxels, "
              f"unmasked per step {trace.accepted_per_step()[:5]}...")
print(f"done in {time.time() - t0:.0f}s; meshes under {out}/")
print("(for real quality, train the desk preset: see README)")
