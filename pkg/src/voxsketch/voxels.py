"""Binary occupancy grids: file format, packing, mesh export.

Grids are numpy bool arrays indexed [x, y, z], z pointing up. The on-disk
format is the magic ``SVOX0001``, three little-endian uint32 dims, then the
occupancy bit-packed with x varying fastest.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .checkpoint import FormatError

MAGIC = b"SVOX0001"
RESOLUTION = 32

_FACE_DIRS = [
    (1, 0, 0), (-1, 0, 0),
    (0, 1, 0), (0, -1, 0),
    (0, 0, 1), (0, 0, -1),
]


def empty_grid(resolution=RESOLUTION):
    return np.zeros((resolution,) * 3, dtype=bool)


def pack_occupancy(grid):
    """Bit-pack a bool grid, x fastest, for files and wire payloads."""
    return np.packbits(np.ascontiguousarray(grid.transpose(2, 1, 0))).tobytes()


def unpack_occupancy(buf, shape=(RESOLUTION,) * 3):
    n = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=n)
    return bits.reshape(shape[::-1]).transpose(2, 1, 0).astype(bool)


def save_voxels(grid, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<3I", *grid.shape))
        fh.write(pack_occupancy(grid))


def load_voxels(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad voxel magic {magic!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise FormatError(f"{path}: truncated voxel header")
        shape = struct.unpack("<3I", header)
        need = (int(np.prod(shape)) + 7) // 8
        payload = fh.read(need)
        if len(payload) != need:
            raise FormatError(f"{path}: truncated voxel payload")
        return unpack_occupancy(payload, shape)


def exposed_faces(grid):
    """Count exposed faces per direction; faces shared by two voxels vanish."""
    counts = {}
    for d in _FACE_DIRS:
        shifted = np.zeros_like(grid)
        src = tuple(
            slice(1, None) if s > 0 else slice(None, -1) if s < 0 else slice(None)
            for s in d
        )
        dst = tuple(
            slice(None, -1) if s > 0 else slice(1, None) if s < 0 else slice(None)
            for s in d
        )
        shifted[dst] = grid[src]
        counts[d] = int(np.count_nonzero(grid & ~shifted))
    return counts


def exposed_face_count(grid):
    return sum(exposed_faces(grid).values())


# corner offsets per face direction, wound counter-clockwise seen from outside
_FACE_CORNERS = {
    (1, 0, 0): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    (-1, 0, 0): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    (0, 1, 0): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    (0, -1, 0): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    (0, 0, 1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    (0, 0, -1): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
}


def export_mesh(grid, path):
    """Write the exposed surface as a text mesh ('v'/'f' records, triangles)."""
    verts = {}
    faces = []

    def vertex(p):
        i = verts.get(p)
        if i is None:
            i = len(verts) + 1
            verts[p] = i
        return i

    occupied = np.argwhere(grid)
    occ = set(map(tuple, occupied))
    for x, y, z in occupied:
        for d, corners in _FACE_CORNERS.items():
            if (x + d[0], y + d[1], z + d[2]) in occ:
                continue
            quad = [vertex((x + c[0], y + c[1], z + c[2])) for c in corners]
            faces.append((quad[0], quad[1], quad[2]))
            faces.append((quad[0], quad[2], quad[3]))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# voxsketch surface mesh"]
    ordered = sorted(verts, key=verts.get)
    lines.extend(f"v {p[0]} {p[1]} {p[2]}" for p in ordered)
    lines.extend(f"f {a} {b} {c}" for a, b, c in faces)
    path.write_text("\n".join(lines) + "\n")
    return len(verts), len(faces)
