"""The iterative decoder's bookkeeping: cosine quota curve, acceptance counts
per step, and guidance blending, all on an untrained model so it runs
instantly.

    python3 demos/04_decode_schedule.py [out_dir]
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from voxsketch.maskformer import MaskFormer, MaskFormerConfig
from voxsketch.sampler import DecodeConfig, cfg_logits, decode, schedule
from voxsketch.seeding import derive_rng

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demos/out")
out.mkdir(parents=True, exist_ok=True)

counts = schedule(512, 15)
print("masked-position quota after each step:", counts)

model = MaskFormer(MaskFormerConfig(width=64, blocks=2, heads=2), seed=1)
features = derive_rng(0, "demo").normal(size=(64, 64)).astype(np.float32)
_, trace = decode(model, features, DecodeConfig(steps=15, guidance_scale=3.0, seed=4))
accepted = trace.accepted_per_step()
print("tokens accepted per step:", accepted, "sum:", sum(accepted))

fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
axes[0].plot(range(1, 16), counts, marker="o")
axes[0].set_title("still-masked quota (cosine)")
axes[0].set_xlabel("step")
axes[1].bar(range(1, 16), accepted)
axes[1].set_title("tokens accepted per step")
axes[1].set_xlabel("step")
fig.tight_layout()
fig.savefig(out / "decode_schedule.png", dpi=120)
print(f"plot -> {out / 'decode_schedule.png'}")

cond = np.array([2.0, -1.0])
uncond = np.array([1.0, -1.5])
for s in (0.0, 1.0, 3.0):
    print(f"guidance scale {s}: blended logits {cfg_logits(cond, uncond, s)}")
