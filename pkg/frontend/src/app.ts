// Page wiring: sketchpad on the left, generated shape cards on the right.
// One in-flight request at a time; stale responses are dropped by id.

import {
  CanvasState, SKETCH_SIZE, Stroke, beginStroke, clear, createState,
  extendStroke, isEmpty, rasterize, undo,
} from "./canvas.js";
import { GenerateClient, ServiceError, buildRequest } from "./client.js";
import { VoxelGrid, decodeOccupancy } from "./grid.js";
import { OrbitCamera, createCamera, drawGrid } from "./viewer.js";

const DISPLAY = 384;
const MODEL_SCALE = DISPLAY / SKETCH_SIZE;

type ShapeCard = {
  grid: VoxelGrid;
  camera: OrbitCamera;
  canvas: HTMLCanvasElement;
  label: HTMLElement;
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function drawSketch(ctx: CanvasRenderingContext2D, state: CanvasState, live?: Stroke) {
  ctx.fillStyle = "#0b0e14";
  ctx.fillRect(0, 0, DISPLAY, DISPLAY);
  ctx.strokeStyle = "#233";
  ctx.lineWidth = 1;
  ctx.strokeRect(0.5, 0.5, DISPLAY - 1, DISPLAY - 1);
  ctx.strokeStyle = "#e8ecf2";
  ctx.lineCap = "round";
  ctx.lineJoin = "round";
  const strokes = live && !state.strokes.includes(live) ? [...state.strokes, live] : state.strokes;
  for (const stroke of strokes) {
    ctx.lineWidth = stroke.width * MODEL_SCALE;
    ctx.beginPath();
    stroke.points.forEach(([x, y], i) => {
      const px = x * MODEL_SCALE;
      const py = y * MODEL_SCALE;
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
  }
}

export function main() {
  const sketchCanvas = el<HTMLCanvasElement>("sketch");
  const ctx = sketchCanvas.getContext("2d")!;
  const status = el<HTMLElement>("status");
  const cardsHost = el<HTMLElement>("cards");
  const state = createState();
  let activeStroke: Stroke | null = null;
  let requestId = 0;
  let inFlight = false;

  const baseUrl = () => (el<HTMLInputElement>("base-url").value || "http://127.0.0.1:8764");

  function toModel(event: PointerEvent): [number, number] {
    const rect = sketchCanvas.getBoundingClientRect();
    const x = ((event.clientX - rect.left) / rect.width) * SKETCH_SIZE;
    const y = ((event.clientY - rect.top) / rect.height) * SKETCH_SIZE;
    return [Math.max(0, Math.min(SKETCH_SIZE - 0.01, x)), Math.max(0, Math.min(SKETCH_SIZE - 0.01, y))];
  }

  sketchCanvas.addEventListener("pointerdown", (e) => {
    sketchCanvas.setPointerCapture(e.pointerId);
    const [x, y] = toModel(e);
    activeStroke = beginStroke(state, x, y);
    drawSketch(ctx, state, activeStroke);
  });
  sketchCanvas.addEventListener("pointermove", (e) => {
    if (!activeStroke) return;
    const [x, y] = toModel(e);
    extendStroke(activeStroke, x, y);
    drawSketch(ctx, state, activeStroke);
  });
  const finish = () => { activeStroke = null; };
  sketchCanvas.addEventListener("pointerup", finish);
  sketchCanvas.addEventListener("pointercancel", finish);

  el<HTMLButtonElement>("undo").onclick = () => { undo(state); drawSketch(ctx, state); };
  el<HTMLButtonElement>("clear").onclick = () => { clear(state); drawSketch(ctx, state); };

  function renderCards(cards: ShapeCard[]) {
    cardsHost.replaceChildren(...cards.map((c) => {
      const wrap = document.createElement("div");
      wrap.className = "card";
      wrap.append(c.canvas, c.label);
      return wrap;
    }));
  }

  async function submit() {
    if (inFlight) return;
    if (isEmpty(state)) {
      status.textContent = "draw something first: the canvas is empty";
      return;
    }
    const options = {
      samples: Number(el<HTMLInputElement>("samples").value) || 5,
      steps: Number(el<HTMLInputElement>("steps").value) || 15,
      scale: Number(el<HTMLInputElement>("scale").value),
      seed: el<HTMLInputElement>("seed").value === "" ? undefined : Number(el<HTMLInputElement>("seed").value),
    };
    const body = buildRequest(rasterize(state), options);
    const client = new GenerateClient(baseUrl());
    const myId = ++requestId;
    inFlight = true;
    status.textContent = "generating...";
    try {
      const response = await client.generate(body);
      if (myId !== requestId) return; // a newer request superseded this one
      status.textContent =
        `seed ${response.seed}, ${response.elapsed_ms.toFixed(0)} ms, ` +
        `model ${response.fingerprints.stage2 ?? "?"}`;
      const cards: ShapeCard[] = response.samples.map((sample) => {
        const canvas = document.createElement("canvas");
        canvas.width = canvas.height = 220;
        const label = document.createElement("div");
        label.className = "label";
        label.textContent = `${sample.category} (${(sample.confidence * 100).toFixed(0)}%)`;
        const grid = decodeOccupancy(sample.occupancy_b64);
        return { grid, camera: createCamera(), canvas, label };
      });
      renderCards(cards);
      animateReveal(cards, response.samples.map((s) => s.unmasked_per_step));
      attachOrbits(cards);
    } catch (err) {
      if (err instanceof ServiceError) {
        status.textContent = err.retryable
          ? `service error (${err.status || "network"}): ${err.message} - retry in a moment`
          : `rejected: ${err.message}`;
      } else {
        status.textContent = `unexpected error: ${err}`;
      }
    } finally {
      inFlight = false;
    }
  }

  function animateReveal(cards: ShapeCard[], stepCounts: number[][]) {
    // decode-progress animation: voxels appear following the per-step counts
    cards.forEach((card, ci) => {
      const counts = stepCounts[ci] ?? [];
      const total = counts.reduce((a, b) => a + b, 0) || 1;
      const cctx = card.canvas.getContext("2d")!;
      let step = 0;
      const full = card.grid;
      const reveal = () => {
        step += 1;
        const frac = counts.slice(0, step).reduce((a, b) => a + b, 0) / total;
        const partial: VoxelGrid = {
          size: full.size,
          cells: full.cells.map((v, i) => (v && (i % 997) / 997 < frac ? 1 : 0)),
        };
        drawGrid(cctx, step >= counts.length ? full : partial, card.camera, card.canvas.width);
        if (step < counts.length) setTimeout(reveal, 70);
      };
      reveal();
    });
  }

  function attachOrbits(cards: ShapeCard[]) {
    for (const card of cards) {
      const cctx = card.canvas.getContext("2d")!;
      let dragging = false;
      let last: [number, number] = [0, 0];
      card.canvas.addEventListener("pointerdown", (e) => {
        dragging = true;
        last = [e.clientX, e.clientY];
        card.canvas.setPointerCapture(e.pointerId);
      });
      card.canvas.addEventListener("pointermove", (e) => {
        if (!dragging) return;
        card.camera.azimuth += (e.clientX - last[0]) * 0.012;
        card.camera.elevation = Math.max(
          -1.4, Math.min(1.4, card.camera.elevation + (e.clientY - last[1]) * 0.012),
        );
        last = [e.clientX, e.clientY];
        drawGrid(cctx, card.grid, card.camera, card.canvas.width);
      });
      card.canvas.addEventListener("pointerup", () => { dragging = false; });
      card.canvas.addEventListener("wheel", (e) => {
        e.preventDefault();
        card.camera.zoom = Math.max(0.4, Math.min(3, card.camera.zoom * (e.deltaY < 0 ? 1.1 : 0.9)));
        drawGrid(cctx, card.grid, card.camera, card.canvas.width);
      });
    }
  }

  el<HTMLButtonElement>("generate").onclick = submit;
  drawSketch(ctx, state);

  new GenerateClient(baseUrl()).health()
    .then((h) => {
      status.textContent = h.ready ? "service ready" : "service is loading checkpoints...";
    })
    .catch(() => { status.textContent = "service unreachable - start it and reload"; });
}

main();
