// Occupancy grids as delivered by the service: 32^3 booleans bit-packed with
// x varying fastest, then base64 encoded.

export const RESOLUTION = 32;

export type VoxelGrid = {
  size: number;
  // index (x, y, z), x fastest
  cells: Uint8Array;
};

export function emptyGrid(size = RESOLUTION): VoxelGrid {
  return { size, cells: new Uint8Array(size * size * size) };
}

export function cellIndex(grid: VoxelGrid, x: number, y: number, z: number): number {
  return x + grid.size * (y + grid.size * z);
}

export function isOccupied(grid: VoxelGrid, x: number, y: number, z: number): boolean {
  if (x < 0 || y < 0 || z < 0 || x >= grid.size || y >= grid.size || z >= grid.size) {
    return false;
  }
  return grid.cells[cellIndex(grid, x, y, z)] !== 0;
}

export function occupiedCount(grid: VoxelGrid): number {
  let n = 0;
  for (const v of grid.cells) n += v;
  return n;
}

export function decodeOccupancy(payloadB64: string, size = RESOLUTION): VoxelGrid {
  const raw = typeof atob === "function"
    ? Uint8Array.from(atob(payloadB64), (c) => c.charCodeAt(0))
    : new Uint8Array(Buffer.from(payloadB64, "base64"));
  const expected = (size * size * size) / 8;
  if (raw.length !== expected) {
    throw new Error(`occupancy payload is ${raw.length} bytes, expected ${expected}`);
  }
  const grid = emptyGrid(size);
  // packed bit i covers flat index i with x fastest, MSB first within a byte
  for (let i = 0; i < size * size * size; i++) {
    const byte = raw[i >> 3];
    const bit = (byte >> (7 - (i & 7))) & 1;
    grid.cells[i] = bit;
  }
  return grid;
}

export type Face = {
  x: number;
  y: number;
  z: number;
  // outward axis direction: one of +-x, +-y, +-z
  dir: [number, number, number];
};

const DIRECTIONS: Array<[number, number, number]> = [
  [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
];

/** Exposed voxel faces; faces shared between two occupied cells vanish. */
export function exposedFaces(grid: VoxelGrid): Face[] {
  const faces: Face[] = [];
  const n = grid.size;
  for (let z = 0; z < n; z++) {
    for (let y = 0; y < n; y++) {
      for (let x = 0; x < n; x++) {
        if (!isOccupied(grid, x, y, z)) continue;
        for (const dir of DIRECTIONS) {
          if (!isOccupied(grid, x + dir[0], y + dir[1], z + dir[2])) {
            faces.push({ x, y, z, dir });
          }
        }
      }
    }
  }
  return faces;
}
