import { describe, expect, it } from "vitest";

import {
  applyStroke,
  brushFootprint,
  createBrush,
  loadCells,
  markSubmitted,
  toSubmissionCells,
} from "../src/brush.js";

describe("brush buffer", () => {
  it("paints a single pixel at radius 0", () => {
    const brush = createBrush(8, 8, 0);
    applyStroke(brush, 3, 2);
    expect(toSubmissionCells(brush)).toEqual([[2 * 8 + 3, "O"]]);
  });

  it("paints a disk clipped to the canvas", () => {
    const brush = createBrush(8, 8, 1);
    applyStroke(brush, 0, 0);
    const pixels = toSubmissionCells(brush).map(([p]) => p);
    expect(pixels).toEqual([0, 1, 8]); // corner: center, right, below
  });

  it("footprint respects the disk radius", () => {
    const brush = createBrush(16, 16, 2);
    const pixels = brushFootprint(brush, 8, 8);
    expect(pixels).toHaveLength(13); // |dx,dy| with dx^2+dy^2 <= 4
    expect(pixels).toContain(8 * 16 + 8);
    expect(pixels).not.toContain(6 * 16 + 6);
  });

  it("nonobject mode writes N and erase removes own cells only", () => {
    const brush = createBrush(4, 4, 0);
    applyStroke(brush, 1, 1);
    brush.mode = "nonobject";
    applyStroke(brush, 2, 1);
    expect(toSubmissionCells(brush)).toEqual([
      [5, "O"],
      [6, "N"],
    ]);
    brush.mode = "erase";
    applyStroke(brush, 1, 1);
    expect(toSubmissionCells(brush)).toEqual([[6, "N"]]);
  });

  it("repainting a pixel overwrites its label", () => {
    const brush = createBrush(4, 4, 0);
    applyStroke(brush, 0, 0);
    brush.mode = "nonobject";
    applyStroke(brush, 0, 0);
    expect(toSubmissionCells(brush)).toEqual([[0, "N"]]);
  });

  it("cells serialize sorted by pixel index", () => {
    const brush = createBrush(8, 8, 0);
    applyStroke(brush, 7, 7);
    applyStroke(brush, 0, 0);
    applyStroke(brush, 3, 4);
    const pixels = toSubmissionCells(brush).map(([p]) => p);
    expect(pixels).toEqual([...pixels].sort((a, b) => a - b));
  });

  it("tracks unsent pixels until submit", () => {
    const brush = createBrush(4, 4, 0);
    applyStroke(brush, 1, 0);
    expect(brush.unsent.size).toBe(1);
    markSubmitted(brush);
    expect(brush.unsent.size).toBe(0);
  });

  it("round-trips through loadCells", () => {
    const brush = createBrush(4, 4, 0);
    applyStroke(brush, 1, 2);
    brush.mode = "nonobject";
    applyStroke(brush, 3, 3);
    const cells = toSubmissionCells(brush);
    const restored = createBrush(4, 4, 0);
    loadCells(restored, cells);
    expect(toSubmissionCells(restored)).toEqual(cells);
  });
});
