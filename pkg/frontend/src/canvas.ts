// Freehand sketch state: polyline strokes in a fixed 64x64 model space.
// Display scaling is cosmetic; export rasterizes model coordinates only, so
// the payload never depends on the on-screen zoom.

export const SKETCH_SIZE = 64;

export type Stroke = {
  // points in model coordinates [0, 64)
  points: Array<[number, number]>;
  width: number;
};

export type CanvasState = {
  strokes: Stroke[];
  undone: Stroke[];
};

export function createState(): CanvasState {
  return { strokes: [], undone: [] };
}

export function beginStroke(state: CanvasState, x: number, y: number, width = 1.6): Stroke {
  const stroke: Stroke = { points: [[x, y]], width };
  state.strokes.push(stroke);
  state.undone = [];
  return stroke;
}

export function extendStroke(stroke: Stroke, x: number, y: number): void {
  stroke.points.push([x, y]);
}

export function undo(state: CanvasState): void {
  const stroke = state.strokes.pop();
  if (stroke) state.undone.push(stroke);
}

export function redo(state: CanvasState): void {
  const stroke = state.undone.pop();
  if (stroke) state.strokes.push(stroke);
}

export function clear(state: CanvasState): void {
  state.strokes = [];
  state.undone = [];
}

export function isEmpty(state: CanvasState): boolean {
  return state.strokes.length === 0;
}

function segmentDistance(
  px: number, py: number, ax: number, ay: number, bx: number, by: number,
): number {
  const dx = bx - ax;
  const dy = by - ay;
  const len2 = dx * dx + dy * dy;
  let t = 0;
  if (len2 > 0) {
    t = Math.max(0, Math.min(1, ((px - ax) * dx + (py - ay) * dy) / len2));
  }
  const cx = ax + t * dx;
  const cy = ay + t * dy;
  return Math.hypot(px - cx, py - cy);
}

/**
 * Binary rasterization of all strokes onto the 64x64 export grid.
 * A pixel is set when its center lies within half a stroke width of any
 * segment; no anti-aliasing, matching the edge-map training domain.
 */
export function rasterize(state: CanvasState): Uint8Array {
  const out = new Uint8Array(SKETCH_SIZE * SKETCH_SIZE);
  for (const stroke of state.strokes) {
    const radius = stroke.width / 2;
    const pts = stroke.points;
    const segments = pts.length > 1
      ? pts.slice(1).map((p, i) => [pts[i], p] as const)
      : [[pts[0], pts[0]] as const];
    for (const [a, b] of segments) {
      const minX = Math.max(0, Math.floor(Math.min(a[0], b[0]) - radius - 1));
      const maxX = Math.min(SKETCH_SIZE - 1, Math.ceil(Math.max(a[0], b[0]) + radius + 1));
      const minY = Math.max(0, Math.floor(Math.min(a[1], b[1]) - radius - 1));
      const maxY = Math.min(SKETCH_SIZE - 1, Math.ceil(Math.max(a[1], b[1]) + radius + 1));
      for (let y = minY; y <= maxY; y++) {
        for (let x = minX; x <= maxX; x++) {
          if (out[y * SKETCH_SIZE + x]) continue;
          const d = segmentDistance(x + 0.5, y + 0.5, a[0], a[1], b[0], b[1]);
          if (d <= radius) out[y * SKETCH_SIZE + x] = 1;
        }
      }
    }
  }
  return out;
}
