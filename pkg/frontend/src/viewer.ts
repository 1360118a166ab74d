// Orbiting voxel viewer on a plain 2d canvas: exposed faces only, orthographic
// projection, painter's sort by depth. Pure geometry is separated from the
// drawing call so tests can check it without a DOM.

import { Face, VoxelGrid, exposedFaces } from "./grid.js";

export type OrbitCamera = {
  azimuth: number;
  elevation: number;
  zoom: number;
};

export function createCamera(): OrbitCamera {
  return { azimuth: Math.PI / 5, elevation: Math.PI / 7, zoom: 1.0 };
}

// corner offsets per face direction, matching the mesh exporter's winding
const FACE_CORNERS: Record<string, Array<[number, number, number]>> = {
  "1,0,0": [[1, 0, 0], [1, 1, 0], [1, 1, 1], [1, 0, 1]],
  "-1,0,0": [[0, 0, 0], [0, 0, 1], [0, 1, 1], [0, 1, 0]],
  "0,1,0": [[0, 1, 0], [0, 1, 1], [1, 1, 1], [1, 1, 0]],
  "0,-1,0": [[0, 0, 0], [1, 0, 0], [1, 0, 1], [0, 0, 1]],
  "0,0,1": [[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
  "0,0,-1": [[0, 0, 0], [0, 1, 0], [1, 1, 0], [1, 0, 0]],
};

export type ProjectedFace = {
  points: Array<[number, number]>;
  depth: number;
  shade: number;
};

function rotate(p: [number, number, number], cam: OrbitCamera): [number, number, number] {
  const [x, y, z] = p;
  const ca = Math.cos(cam.azimuth);
  const sa = Math.sin(cam.azimuth);
  const ce = Math.cos(cam.elevation);
  const se = Math.sin(cam.elevation);
  const rx = ca * x - sa * y;
  const ry = sa * x + ca * y;
  const rz = z;
  // pitch about the screen-horizontal axis; depth axis is y after yaw
  return [rx, ce * ry - se * rz, se * ry + ce * rz];
}

export function projectFaces(
  faces: Face[], grid: VoxelGrid, cam: OrbitCamera, viewport: number,
): ProjectedFace[] {
  const half = grid.size / 2;
  const scale = (cam.zoom * viewport) / (grid.size * 1.9);
  const out: ProjectedFace[] = [];
  for (const face of faces) {
    const corners = FACE_CORNERS[face.dir.join(",")];
    const pts: Array<[number, number]> = [];
    let depth = 0;
    for (const c of corners) {
      const world: [number, number, number] = [
        face.x + c[0] - half, face.y + c[1] - half, face.z + c[2] - half,
      ];
      const [rx, rdepth, rup] = rotate(world, cam);
      pts.push([viewport / 2 + rx * scale, viewport / 2 - rup * scale]);
      depth += rdepth;
    }
    const normal = rotate(face.dir as [number, number, number], cam);
    // simple head-on lighting plus a fixed key light from the upper left
    const shade = 0.45 - 0.35 * normal[1] + 0.2 * normal[2];
    out.push({ points: pts, depth: depth / 4, shade: Math.max(0.1, Math.min(1, shade)) });
  }
  out.sort((a, b) => b.depth - a.depth);
  return out;
}

export function drawGrid(
  ctx: CanvasRenderingContext2D, grid: VoxelGrid, cam: OrbitCamera, viewport: number,
): number {
  const faces = exposedFaces(grid);
  const projected = projectFaces(faces, grid, cam, viewport);
  ctx.clearRect(0, 0, viewport, viewport);
  // axis gizmo so an empty grid still reads as a scene
  ctx.strokeStyle = "#384252";
  ctx.lineWidth = 1;
  for (const axis of [[1, 0, 0], [0, 1, 0], [0, 0, 1]] as const) {
    const [ax, , aup] = rotate([axis[0] * 6, axis[1] * 6, axis[2] * 6], cam);
    ctx.beginPath();
    ctx.moveTo(viewport / 2, viewport / 2);
    ctx.lineTo(viewport / 2 + ax * (cam.zoom * viewport) / 60, viewport / 2 - aup * (cam.zoom * viewport) / 60);
    ctx.stroke();
  }
  for (const face of projected) {
    ctx.beginPath();
    ctx.moveTo(face.points[0][0], face.points[0][1]);
    for (const p of face.points.slice(1)) ctx.lineTo(p[0], p[1]);
    ctx.closePath();
    const tone = Math.round(90 + 140 * face.shade);
    ctx.fillStyle = `rgb(${Math.round(tone * 0.55)}, ${Math.round(tone * 0.8)}, ${tone})`;
    ctx.fill();
  }
  return faces.length;
}
