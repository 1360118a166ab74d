"""Orthographic rendering of occupancy grids to 64x64 grayscale images.

The grid is resampled under a rotation (nearest neighbor, so quarter-turn
views are exact) and projected along the depth axis. Silhouette style marks
covered pixels with 1; shaded style writes the normalized inverse depth of
the nearest voxel, so closer surfaces are brighter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .voxels import RESOLUTION

IMAGE_SIZE = 64
_UPSCALE = IMAGE_SIZE // RESOLUTION

AZIMUTHS = tuple(i * math.pi / 4 for i in range(8))
ELEVATIONS = (-math.pi / 6, 0.0, math.pi / 6)


@dataclass(frozen=True)
class ViewSpec:
    azimuth: float
    elevation: float
    style: str = "shaded"

    def __post_init__(self):
        if self.style not in ("silhouette", "shaded"):
            raise ValueError(f"unknown render style {self.style!r}")


def canonical_views(style="shaded"):
    """The 24 standard views: 8 azimuths crossed with 3 elevations."""
    return tuple(
        ViewSpec(az, el, style) for el in ELEVATIONS for az in AZIMUTHS
    )


def _rotation(azimuth, elevation):
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    ce, se = math.cos(elevation), math.sin(elevation)
    yaw = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    # pitch about the image-horizontal (x) axis
    pitch = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    return pitch @ yaw


def rotate_grid(grid, azimuth, elevation):
    """Resample the grid under the view rotation, nearest neighbor."""
    n = grid.shape[0]
    half = n / 2.0
    ax = np.arange(n) + 0.5 - half
    dx, dy, dz = np.meshgrid(ax, ax, ax, indexing="ij")
    dest = np.stack([dx.ravel(), dy.ravel(), dz.ravel()])
    src = _rotation(azimuth, elevation).T @ dest
    idx = np.floor(src + half).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < n), axis=0)
    out = np.zeros(n**3, dtype=bool)
    sel = idx[:, inside]
    out[inside] = grid[sel[0], sel[1], sel[2]]
    return out.reshape(n, n, n)


def render(grid, view):
    """Project the grid orthographically for one view; pure in the grid."""
    n = grid.shape[0]
    rotated = rotate_grid(grid, view.azimuth, view.elevation)
    # camera sits at -y looking toward +y; image row 0 is the top (max z)
    occupied = rotated.any(axis=1)
    if view.style == "silhouette":
        small = occupied.astype(np.float32)
    else:
        depth = np.argmax(rotated, axis=1).astype(np.float32)
        shade = (n - depth) / n
        small = np.where(occupied, shade, 0.0).astype(np.float32)
    img = small.T[::-1]  # (x, z) -> rows top-down, cols left-right
    return np.repeat(np.repeat(img, _UPSCALE, axis=0), _UPSCALE, axis=1)
