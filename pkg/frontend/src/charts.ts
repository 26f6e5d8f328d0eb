/**
 * Metric-panel series built from served history records.
 *
 * Values pass through untouched (undefined metrics stay null and produce
 * gaps); only the geometry scaling for the canvas is computed here.
 */

import type { HistoryRecord } from "./types.js";

export interface Series {
  name: string;
  epochs: number[];
  values: (number | null)[];
}

export interface ChartSeries {
  loss: Series;
  liou: Series;
  lerrors: Series;
}

export function buildSeries(records: HistoryRecord[]): ChartSeries {
  const epochs = records.map((r) => r.epoch);
  return {
    loss: { name: "Loss", epochs, values: records.map((r) => r.loss) },
    liou: { name: "LIoU", epochs, values: records.map((r) => r.metrics.LIoU) },
    lerrors: { name: "LErrors", epochs, values: records.map((r) => r.metrics.LErrors) },
  };
}

/** Last defined point of a series, or null if it has none. */
export function finalPoint(series: Series): { epoch: number; value: number } | null {
  for (let i = series.values.length - 1; i >= 0; i--) {
    const v = series.values[i];
    if (v !== null) {
      return { epoch: series.epochs[i], value: v };
    }
  }
  return null;
}

export interface ScaledPoint {
  x: number;
  y: number;
  epoch: number;
  value: number;
}

/**
 * Scale the defined points of a series into a width x height box
 * (y grows downward, matching canvas coordinates).  Gaps from null values
 * are preserved by returning polyline segments.
 */
export function scaleSeries(series: Series, width: number, height: number): ScaledPoint[][] {
  const defined = series.values
    .map((v, i) => ({ epoch: series.epochs[i], value: v }))
    .filter((p): p is { epoch: number; value: number } => p.value !== null);
  if (defined.length === 0) {
    return [];
  }
  const epochMin = series.epochs[0];
  const epochMax = series.epochs[series.epochs.length - 1];
  let lo = Math.min(...defined.map((p) => p.value));
  let hi = Math.max(...defined.map((p) => p.value));
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const spanX = Math.max(epochMax - epochMin, 1);
  const segments: ScaledPoint[][] = [];
  let current: ScaledPoint[] = [];
  for (let i = 0; i < series.values.length; i++) {
    const v = series.values[i];
    if (v === null) {
      if (current.length > 0) {
        segments.push(current);
        current = [];
      }
      continue;
    }
    current.push({
      x: ((series.epochs[i] - epochMin) / spanX) * width,
      y: height - ((v - lo) / (hi - lo)) * height,
      epoch: series.epochs[i],
      value: v,
    });
  }
  if (current.length > 0) {
    segments.push(current);
  }
  return segments;
}
