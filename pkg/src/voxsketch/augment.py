"""Image augmentations that manufacture the sketch domain from renders.

Three families: affine jitter (rotate/translate/scale, nearest neighbor),
intensity jitter (gain/bias with clamping), and edge extraction (gradient
magnitude, non-maximum suppression, hysteresis) whose binary output stands in
for hand-drawn sketches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_rng

AUGMENT_NAMES = ("affine", "color", "canny")


@dataclass
class AugmentSpec:
    enable_affine: bool = False
    enable_intensity: bool = False
    enable_edge: bool = False
    rotation: float = math.radians(15.0)  # max |angle|
    translation: float = 0.10             # max |shift| as fraction of width
    scale_range: tuple = (0.85, 1.15)
    gain_range: tuple = (0.7, 1.3)
    bias_range: tuple = (-0.15, 0.15)
    edge_low: float = 0.1
    edge_high: float = 0.3

    def __post_init__(self):
        if self.scale_range[0] <= 0:
            raise ValueError("scale range must be positive")
        if not (0 <= self.edge_low <= self.edge_high <= 1):
            raise ValueError("edge thresholds must satisfy 0 <= low <= high <= 1")

    @classmethod
    def from_names(cls, names):
        """Build a spec from a comma list out of {affine,color,canny,all,none}."""
        if isinstance(names, str):
            names = [n.strip() for n in names.split(",") if n.strip()]
        chosen = set(names)
        unknown = chosen - set(AUGMENT_NAMES) - {"all", "none"}
        if unknown:
            raise ValueError(f"unknown augmentation names: {sorted(unknown)}")
        if "all" in chosen:
            chosen = set(AUGMENT_NAMES)
        if "none" in chosen:
            chosen = set()
        return cls(
            enable_affine="affine" in chosen,
            enable_intensity="color" in chosen,
            enable_edge="canny" in chosen,
        )

    @property
    def names(self):
        out = []
        if self.enable_affine:
            out.append("affine")
        if self.enable_intensity:
            out.append("color")
        if self.enable_edge:
            out.append("canny")
        return out


def affine(image, rotation=0.0, translation=(0.0, 0.0), scale=1.0):
    """Rotate/scale about the center then translate; nearest-neighbor resample.

    ``translation`` is in pixels (row, col). Pixels pulled from outside the
    frame become 0.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # invert: undo translation, then undo rotation+scale about the center
    yr = rows - cy - translation[0]
    xc = cols - cx - translation[1]
    cos_t, sin_t = math.cos(rotation), math.sin(rotation)
    src_r = (cos_t * yr + sin_t * xc) / scale + cy
    src_c = (-sin_t * yr + cos_t * xc) / scale + cx
    ri = np.rint(src_r).astype(np.int64)
    ci = np.rint(src_c).astype(np.int64)
    inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
    out = np.zeros_like(image)
    out[inside] = image[ri[inside], ci[inside]]
    return out


def intensity_jitter(image, gain, bias):
    """pixel <- clamp(gain * pixel + bias, 0, 1)."""
    return np.clip(gain * image + bias, 0.0, 1.0).astype(image.dtype)


def _gradients(image):
    """Central-difference gradients from 3x3 horizontal/vertical kernels."""
    padded = np.pad(image, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return gx, gy


def _nms(mag, gx, gy):
    """Keep ridge pixels along the gradient direction.

    Ties between the two pixels straddling a step resolve toward the brighter
    side: a pixel survives when it is >= its darker-side neighbor and
    strictly > its brighter-side neighbor, which yields one-pixel-wide edges.
    """
    h, w = mag.shape
    angle = np.arctan2(gy, gx)
    dr = np.rint(np.sin(angle)).astype(np.int64)
    dc = np.rint(np.cos(angle)).astype(np.int64)
    padded = np.pad(mag, 1)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ahead = padded[rows + 1 + dr, cols + 1 + dc]
    behind = padded[rows + 1 - dr, cols + 1 - dc]
    return (mag > 0) & (mag >= behind) & (mag > ahead)


def _hysteresis(mag, keep, low, high):
    strong = keep & (mag >= high)
    weak = keep & (mag >= low)
    grown = strong.copy()
    while True:
        padded = np.pad(grown, 1)
        neighbor = np.zeros_like(grown)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr or dc:
                    neighbor |= padded[1 + dr : 1 + dr + grown.shape[0],
                                       1 + dc : 1 + dc + grown.shape[1]]
        expanded = grown | (weak & neighbor)
        if (expanded == grown).all():
            return grown
        grown = expanded


def edge_map(image, low=0.1, high=0.3):
    """Binary edge image: gradient magnitude, NMS, double-threshold hysteresis."""
    if not (0 <= low <= high <= 1):
        raise ValueError("edge thresholds must satisfy 0 <= low <= high <= 1")
    gx, gy = _gradients(image)
    mag = np.hypot(gx, gy)
    keep = _nms(mag, gx, gy)
    edges = _hysteresis(mag, keep, low, high)
    return edges.astype(np.float32)


def apply(spec, image, rng_or_seed):
    """Apply the enabled augmentations in affine -> intensity -> edge order.

    Draws come from the supplied generator (or a seed), so a batch assembled
    from (run seed, epoch, sample id) keys reproduces exactly.
    """
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else derive_rng(rng_or_seed, "augment")
    out = image
    if spec.enable_affine:
        h = image.shape[0]
        out = affine(
            out,
            rotation=rng.uniform(-spec.rotation, spec.rotation),
            translation=(
                rng.uniform(-spec.translation, spec.translation) * h,
                rng.uniform(-spec.translation, spec.translation) * h,
            ),
            scale=rng.uniform(*spec.scale_range),
        )
    if spec.enable_intensity:
        out = intensity_jitter(
            out, rng.uniform(*spec.gain_range), rng.uniform(*spec.bias_range)
        )
    if spec.enable_edge:
        out = edge_map(out, spec.edge_low, spec.edge_high)
    return out
