/**
 * Payload types of the miatt-forge supervision service.
 *
 * These mirror the JSON shapes served over HTTP one-to-one; the workbench
 * never reshapes or recomputes served numbers (metric math stays
 * server-side by design).
 */

export type CellLabel = "O" | "N";

/** Sparse annotation cell: [row-major pixel index, label]. */
export type SubmissionCell = [number, CellLabel];

export interface AssessmentReport {
  count_ok: boolean;
  partial_flags: boolean[];
  consistent: boolean;
  /** One entry per disputed pixel: [pixel, first target, second target]. */
  conflicts: [number, number, number][];
  coverage: number;
  covered_pixels: number;
  total_pixels: number;
  passed: boolean;
}

export interface InstanceSummary {
  id: string;
  width: number;
  height: number;
  contributors: string[];
  assessment_passed: boolean;
}

export interface RoundStatus {
  token: string;
  status: "running" | "done" | "failed";
  epoch: number;
  selected_epoch?: number;
  error?: string;
}

export interface ProjectSummary {
  id: string;
  instances: InstanceSummary[];
  round_status: "idle" | "running" | "done";
  rounds: RoundStatus[];
  has_model: boolean;
}

export interface ConfusionCounts {
  ltp: number;
  lfp: number;
  ltn: number;
  lfn: number;
  undetermined: number;
}

export interface MetricValues {
  LPrecision: number | null;
  LRecall: number | null;
  LF1: number | null;
  LAccuracy: number | null;
  LIoU: number | null;
  LErrors: number;
}

export interface HistoryRecord {
  epoch: number;
  loss: number;
  counts: ConfusionCounts;
  metrics: MetricValues;
}

export interface RoundHistory {
  token: string;
  records: HistoryRecord[];
  selected_epoch: number | null;
}

export interface AgreementCounts {
  agree_object: number;
  agree_nonobject: number;
  false_positive: number;
  false_negative: number;
  undetermined: number;
}

/**
 * Per-pixel comparison payload.  Image planes are base64 raw bytes, one
 * byte per pixel, row-major: instance is grayscale 0-255; labeling planes
 * use 0=unknown 1=object 2=non-object; the agreement plane uses
 * 0=undetermined 1=agree-object 2=agree-nonobject 3=false-positive
 * 4=false-negative.
 */
export interface ComparisonPayload {
  instance_id: string;
  width: number;
  height: number;
  instance: string;
  prediction: string;
  ltt: string;
  targets: { contributor: string; cells: string }[];
  agreement: string;
  agreement_counts: AgreementCounts;
  counts: ConfusionCounts;
  metrics: MetricValues;
}

export interface ServiceError {
  code: string;
  message: string;
  details: Record<string, unknown>;
}
