"""Procedural generators for eight labeled shape families on a 32^3 grid.

Each generator is deterministic in (category, seed) and keeps at least one
empty voxel of margin on every side. The drawn parameters are returned
alongside the grid so a corpus entry can be regenerated from its seed alone.
"""

from __future__ import annotations

import numpy as np

from .seeding import derive_rng
from .voxels import RESOLUTION

CATEGORIES = ("box", "sphere", "cylinder", "cone", "torus", "l-beam", "table", "chair")
CATEGORY_IDS = {name: i for i, name in enumerate(CATEGORIES)}

_N = RESOLUTION
_LO, _HI = 1, _N - 1  # keep a one-voxel margin


def _centers():
    ax = np.arange(_N) + 0.5
    return np.meshgrid(ax, ax, ax, indexing="ij")


def _box_mask(x0, x1, y0, y1, z0, z1):
    grid = np.zeros((_N, _N, _N), dtype=bool)
    grid[int(x0):int(x1), int(y0):int(y1), int(z0):int(z1)] = True
    return grid


def _jitter_center(rng, extent):
    room = (_N - 2 - extent) / 2
    return _N / 2 + rng.uniform(-min(room, 2.0), min(room, 2.0))


def _gen_box(rng):
    # chunky proportions; plank- and pillar-like boxes read as other classes
    a, b, c = (int(rng.integers(12, 25)) for _ in range(3))
    x0 = int(rng.integers(_LO, _N - 1 - a + 1))
    y0 = int(rng.integers(_LO, _N - 1 - b + 1))
    z0 = int(rng.integers(_LO, _N - 1 - c + 1))
    params = {"extents": [a, b, c], "origin": [x0, y0, z0]}
    return _box_mask(x0, x0 + a, y0, y0 + b, z0, z0 + c), params


def _gen_sphere(rng):
    r = float(rng.uniform(5.0, 13.0))
    cx = _jitter_center(rng, 2 * r)
    cy = _jitter_center(rng, 2 * r)
    cz = _jitter_center(rng, 2 * r)
    xx, yy, zz = _centers()
    grid = (xx - cx) ** 2 + (yy - cy) ** 2 + (zz - cz) ** 2 <= r * r
    return grid, {"radius": r, "center": [cx, cy, cz]}


def _gen_cylinder(rng):
    # tall proportions keep the side outline distinct from a box
    r = float(rng.uniform(5.0, 9.0))
    h = int(rng.integers(16, 29))
    cx = _jitter_center(rng, 2 * r)
    cy = _jitter_center(rng, 2 * r)
    z0 = int(rng.integers(_LO, _N - 1 - h + 1))
    xx, yy, zz = _centers()
    radial = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    grid = radial & (zz >= z0) & (zz <= z0 + h)
    return grid, {"radius": r, "height": h, "center": [cx, cy], "z0": z0}


def _gen_cone(rng):
    r = float(rng.uniform(5.0, 12.0))
    h = int(rng.integers(12, 29))
    cx = _jitter_center(rng, 2 * r)
    cy = _jitter_center(rng, 2 * r)
    z0 = int(rng.integers(_LO, _N - 1 - h + 1))
    xx, yy, zz = _centers()
    t = np.clip((zz - z0) / h, 0.0, 1.0)
    radial = (xx - cx) ** 2 + (yy - cy) ** 2 <= (r * (1.0 - t)) ** 2
    grid = radial & (zz >= z0) & (zz <= z0 + h)
    return grid, {"base_radius": r, "height": h, "center": [cx, cy], "z0": z0}


def _gen_torus(rng):
    major = float(rng.uniform(7.0, 11.0))
    minor = float(rng.uniform(2.0, min(4.0, major - 3.0)))
    cx = _jitter_center(rng, 2 * (major + minor))
    cy = _jitter_center(rng, 2 * (major + minor))
    cz = _jitter_center(rng, 2 * minor)
    xx, yy, zz = _centers()
    ring = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2) - major
    grid = ring**2 + (zz - cz) ** 2 <= minor**2
    return grid, {"major": major, "minor": minor, "center": [cx, cy, cz]}


def _gen_l_beam(rng):
    # corner bracket: one arm along x, one along z, so the L profile stays
    # visible from most azimuths instead of degenerating to a rectangle
    arm_a = int(rng.integers(18, 29))
    arm_b = int(rng.integers(18, 29))
    thick = int(rng.integers(4, 7))
    x0 = int(rng.integers(_LO, _N - 1 - arm_a + 1))
    y0 = int(rng.integers(_LO, _N - 1 - thick + 1))
    z0 = int(rng.integers(_LO, _N - 1 - arm_b + 1))
    along_x = _box_mask(x0, x0 + arm_a, y0, y0 + thick, z0, z0 + thick)
    along_z = _box_mask(x0, x0 + thick, y0, y0 + thick, z0, z0 + arm_b)
    params = {
        "arms": [arm_a, arm_b], "thickness": thick, "origin": [x0, y0, z0],
    }
    return along_x | along_z, params


def _leg_positions(x0, x1, y0, y1, leg):
    return [
        (x0, y0), (x1 - leg, y0), (x0, y1 - leg), (x1 - leg, y1 - leg),
    ]


def _gen_table(rng):
    # wide, low, flat: clearly separated from the tall-backed chair profile
    top_x = int(rng.integers(18, 29))
    top_y = int(rng.integers(18, 29))
    top_t = int(rng.integers(2, 4))
    height = int(rng.integers(10, 17))
    leg = int(rng.integers(2, 4))
    x0 = int(rng.integers(_LO, _N - 1 - top_x + 1))
    y0 = int(rng.integers(_LO, _N - 1 - top_y + 1))
    z_top = _LO + height
    grid = _box_mask(x0, x0 + top_x, y0, y0 + top_y, z_top, min(z_top + top_t, _HI))
    for lx, ly in _leg_positions(x0, x0 + top_x, y0, y0 + top_y, leg):
        grid |= _box_mask(lx, lx + leg, ly, ly + leg, _LO, z_top)
    params = {
        "top": [top_x, top_y, top_t], "height": height, "leg_width": leg,
        "legs": 4, "origin": [x0, y0],
    }
    return grid, params


def _gen_chair(rng):
    seat = int(rng.integers(9, 15))
    seat_t = int(rng.integers(2, 4))
    seat_h = int(rng.integers(7, 12))
    back_h = int(rng.integers(10, 17))
    back_t = 2
    leg = int(rng.integers(2, 4))
    x0 = int(rng.integers(_LO, _N - 1 - seat + 1))
    y0 = int(rng.integers(_LO, _N - 1 - seat + 1))
    z_seat = _LO + seat_h
    top = min(z_seat + seat_t + back_h, _HI)
    grid = _box_mask(x0, x0 + seat, y0, y0 + seat, z_seat, z_seat + seat_t)
    for lx, ly in _leg_positions(x0, x0 + seat, y0, y0 + seat, leg):
        grid |= _box_mask(lx, lx + leg, ly, ly + leg, _LO, z_seat)
    grid |= _box_mask(x0, x0 + seat, y0, y0 + back_t, z_seat + seat_t, top)
    params = {
        "seat": [seat, seat_t], "seat_height": seat_h, "back": [back_h, back_t],
        "leg_width": leg, "legs": 4, "origin": [x0, y0],
    }
    return grid, params


_GENERATORS = {
    "box": _gen_box,
    "sphere": _gen_sphere,
    "cylinder": _gen_cylinder,
    "cone": _gen_cone,
    "torus": _gen_torus,
    "l-beam": _gen_l_beam,
    "table": _gen_table,
    "chair": _gen_chair,
}


def generate_shape(category, seed):
    """Build one labeled shape; returns (bool grid, parameter record)."""
    if category not in _GENERATORS:
        raise ValueError(f"unknown category {category!r}")
    rng = derive_rng(seed, "shape", category)
    grid, params = _GENERATORS[category](rng)
    params["category"] = category
    params["seed"] = int(seed)
    assert grid.any(), f"{category} generator produced an empty grid"
    return grid, params
