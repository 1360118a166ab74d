import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

import { decodeOccupancy, emptyGrid, exposedFaces } from "../src/grid.js";
import { createCamera, projectFaces } from "../src/viewer.js";

const fixtures = JSON.parse(
  readFileSync(fileURLToPath(new URL("./fixtures.json", import.meta.url)), "utf-8"),
);

describe("projection", () => {
  it("projects one quad per exposed face, fixture-count many", () => {
    for (const fx of fixtures) {
      const grid = decodeOccupancy(fx.occupancy_b64);
      const faces = exposedFaces(grid);
      const projected = projectFaces(faces, grid, createCamera(), 220);
      expect(projected.length, fx.name).toBe(fx.exposed_faces);
    }
  });

  it("sorts far faces first so near faces paint over them", () => {
    const fx = fixtures.find((f: any) => f.name === "chair");
    const grid = decodeOccupancy(fx.occupancy_b64);
    const projected = projectFaces(exposedFaces(grid), grid, createCamera(), 220);
    for (let i = 1; i < projected.length; i++) {
      expect(projected[i - 1].depth).toBeGreaterThanOrEqual(projected[i].depth);
    }
  });

  it("keeps projected points inside a generous viewport box", () => {
    const fx = fixtures.find((f: any) => f.name === "random");
    const grid = decodeOccupancy(fx.occupancy_b64);
    const projected = projectFaces(exposedFaces(grid), grid, createCamera(), 220);
    let lo = Infinity;
    let hi = -Infinity;
    for (const face of projected) {
      for (const [x, y] of face.points) {
        lo = Math.min(lo, x, y);
        hi = Math.max(hi, x, y);
      }
    }
    expect(lo).toBeGreaterThan(-40);
    expect(hi).toBeLessThan(260);
  });

  it("camera orbit never mutates the grid", () => {
    const fx = fixtures.find((f: any) => f.name === "single");
    const grid = decodeOccupancy(fx.occupancy_b64);
    const before = Buffer.from(grid.cells).toString("hex");
    const cam = createCamera();
    for (let i = 0; i < 8; i++) {
      cam.azimuth += 0.5;
      projectFaces(exposedFaces(grid), grid, cam, 220);
    }
    expect(Buffer.from(grid.cells).toString("hex")).toBe(before);
  });

  it("handles the empty grid (axis gizmo only, no faces)", () => {
    const projected = projectFaces(exposedFaces(emptyGrid()), emptyGrid(), createCamera(), 220);
    expect(projected.length).toBe(0);
  });
});
