/**
 * Brush state and the contributor's local cell buffer.
 *
 * A contributor's annotation is a sparse map pixel -> O/N.  Painting edits
 * the local buffer only; submitting sends the whole buffer, which replaces
 * the contributor's previous target server-side (latest wins).  Erasing
 * therefore only ever clears the contributor's own cells.
 */

import type { CellLabel, SubmissionCell } from "./types.js";

export type BrushMode = "object" | "nonobject" | "erase";

export interface BrushState {
  mode: BrushMode;
  radius: number;
  width: number;
  height: number;
  /** The contributor's current cells, pixel index -> label. */
  cells: Map<number, CellLabel>;
  /** Pixels touched since the last submit (for dirty indicators). */
  unsent: Set<number>;
}

export function createBrush(width: number, height: number, radius = 1): BrushState {
  if (width < 1 || height < 1) {
    throw new Error("brush needs a positive canvas size");
  }
  return {
    mode: "object",
    radius,
    width,
    height,
    cells: new Map(),
    unsent: new Set(),
  };
}

/** Pixel indices of the brush disk centered at (x, y), clipped to bounds. */
export function brushFootprint(state: BrushState, x: number, y: number): number[] {
  const out: number[] = [];
  const r = Math.max(0, Math.floor(state.radius));
  for (let dy = -r; dy <= r; dy++) {
    for (let dx = -r; dx <= r; dx++) {
      if (dx * dx + dy * dy > r * r) continue;
      const px = x + dx;
      const py = y + dy;
      if (px < 0 || px >= state.width || py < 0 || py >= state.height) continue;
      out.push(py * state.width + px);
    }
  }
  return out;
}

/** Apply one stroke sample at canvas pixel (x, y). */
export function applyStroke(state: BrushState, x: number, y: number): void {
  for (const pixel of brushFootprint(state, x, y)) {
    if (state.mode === "erase") {
      if (state.cells.delete(pixel)) {
        state.unsent.add(pixel);
      }
    } else {
      state.cells.set(pixel, state.mode === "object" ? "O" : "N");
      state.unsent.add(pixel);
    }
  }
}

/**
 * The buffer as submission cells, sorted by pixel index so identical
 * buffers serialize identically.
 */
export function toSubmissionCells(state: BrushState): SubmissionCell[] {
  return [...state.cells.entries()]
    .sort((a, b) => a[0] - b[0])
    .map(([pixel, label]) => [pixel, label]);
}

/** Mark the buffer clean after a successful submit. */
export function markSubmitted(state: BrushState): void {
  state.unsent.clear();
}

/** Restore a buffer from previously submitted cells. */
export function loadCells(state: BrushState, cells: SubmissionCell[]): void {
  state.cells.clear();
  state.unsent.clear();
  for (const [pixel, label] of cells) {
    state.cells.set(pixel, label);
  }
}
