/**
 * Comparison view: decoding served byte planes and compositing layers.
 *
 * Every number shown in the metric panel comes straight from the payload
 * (counts/metrics); the byte planes are only colorized for the canvas.
 * countClasses exists so tests can verify the served planes agree with the
 * served counts, never to display recomputed numbers.
 */

import type { AgreementCounts, ComparisonPayload } from "./types.js";

export type Rgba = [number, number, number, number];

export interface LegendEntry {
  code: number;
  key: keyof AgreementCounts;
  label: string;
  color: Rgba;
}

/** The five agreement classes; exactly one color per served class code. */
export const AGREEMENT_LEGEND: LegendEntry[] = [
  { code: 0, key: "undetermined", label: "undetermined", color: [128, 128, 128, 110] },
  { code: 1, key: "agree_object", label: "agree: object", color: [0, 170, 60, 200] },
  { code: 2, key: "agree_nonobject", label: "agree: non-object", color: [20, 90, 40, 120] },
  { code: 3, key: "false_positive", label: "false positive", color: [230, 60, 30, 220] },
  { code: 4, key: "false_negative", label: "false negative", color: [250, 170, 20, 220] },
];

/** Labeling plane colors: 0 unknown, 1 object, 2 non-object. */
export const LABEL_COLORS: Rgba[] = [
  [0, 0, 0, 0],
  [40, 120, 255, 180],
  [15, 40, 90, 140],
];

export const CONFLICT_COLOR: Rgba = [255, 0, 200, 255];

export function decodeBase64(data: string): Uint8Array {
  if (typeof atob === "function") {
    const binary = atob(data);
    const out = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i++) {
      out[i] = binary.charCodeAt(i);
    }
    return out;
  }
  // Node fallback for tooling without atob
  return new Uint8Array(Buffer.from(data, "base64"));
}

/** Tally a served agreement plane by class (test-side cross-check). */
export function countClasses(agreement: Uint8Array): AgreementCounts {
  const counts: AgreementCounts = {
    undetermined: 0,
    agree_object: 0,
    agree_nonobject: 0,
    false_positive: 0,
    false_negative: 0,
  };
  const byCode = new Map(AGREEMENT_LEGEND.map((e) => [e.code, e.key]));
  for (const code of agreement) {
    const key = byCode.get(code);
    if (key === undefined) {
      throw new Error(`unknown agreement class code ${code}`);
    }
    counts[key] += 1;
  }
  return counts;
}

function paint(out: Uint8ClampedArray, i: number, color: Rgba): void {
  out[i * 4] = color[0];
  out[i * 4 + 1] = color[1];
  out[i * 4 + 2] = color[2];
  out[i * 4 + 3] = color[3];
}

/** Grayscale instance bytes -> opaque RGBA. */
export function instanceToRgba(bytes: Uint8Array): Uint8ClampedArray {
  const out = new Uint8ClampedArray(bytes.length * 4);
  for (let i = 0; i < bytes.length; i++) {
    paint(out, i, [bytes[i], bytes[i], bytes[i], 255]);
  }
  return out;
}

/** Labeling plane (0/1/2 codes) -> translucent RGBA overlay. */
export function labelingToRgba(bytes: Uint8Array): Uint8ClampedArray {
  const out = new Uint8ClampedArray(bytes.length * 4);
  for (let i = 0; i < bytes.length; i++) {
    const color = LABEL_COLORS[bytes[i]];
    if (color === undefined) {
      throw new Error(`unknown labeling code ${bytes[i]}`);
    }
    paint(out, i, color);
  }
  return out;
}

/** Agreement plane -> RGBA overlay using the legend colors. */
export function agreementToRgba(bytes: Uint8Array): Uint8ClampedArray {
  const out = new Uint8ClampedArray(bytes.length * 4);
  const byCode = new Map(AGREEMENT_LEGEND.map((e) => [e.code, e.color]));
  for (let i = 0; i < bytes.length; i++) {
    const color = byCode.get(bytes[i]);
    if (color === undefined) {
      throw new Error(`unknown agreement class code ${bytes[i]}`);
    }
    paint(out, i, color);
  }
  return out;
}

export interface ComparisonLayer {
  id: string;
  label: string;
  rgba: Uint8ClampedArray;
  visible: boolean;
}

/** Decode a payload into toggleable canvas layers, base image first. */
export function buildLayers(payload: ComparisonPayload): ComparisonLayer[] {
  const layers: ComparisonLayer[] = [
    {
      id: "instance",
      label: "instance image",
      rgba: instanceToRgba(decodeBase64(payload.instance)),
      visible: true,
    },
    {
      id: "prediction",
      label: "binarized prediction",
      rgba: labelingToRgba(decodeBase64(payload.prediction)),
      visible: false,
    },
    {
      id: "ltt",
      label: "merged facts (LTT)",
      rgba: labelingToRgba(decodeBase64(payload.ltt)),
      visible: false,
    },
  ];
  payload.targets.forEach((target, i) => {
    layers.push({
      id: `target-${i}`,
      label: `target: ${target.contributor}`,
      rgba: labelingToRgba(decodeBase64(target.cells)),
      visible: false,
    });
  });
  layers.push({
    id: "agreement",
    label: "agreement classes",
    rgba: agreementToRgba(decodeBase64(payload.agreement)),
    visible: true,
  });
  return layers;
}
