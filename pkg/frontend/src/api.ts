/**
 * Typed fetch client for the supervision service.
 *
 * Errors are surfaced as ApiError carrying the service's {code, message,
 * details} body verbatim so the UI can render them unchanged.
 */

import type {
  AssessmentReport,
  ComparisonPayload,
  ProjectSummary,
  RoundHistory,
  RoundStatus,
  ServiceError,
  SubmissionCell,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly details: Record<string, unknown>;

  constructor(status: number, body: ServiceError) {
    super(body.message);
    this.status = status;
    this.code = body.code;
    this.details = body.details ?? {};
  }
}

export interface RoundConfig {
  alpha?: number[];
  learning_rate?: number;
  momentum?: number;
  max_epochs?: number;
  eval_every?: number;
  stop_liou_min?: number;
  stop_lerrors_max?: number;
  prob_clamp_epsilon?: number;
  patch_radius?: number;
  hidden_width?: number;
  seed?: number;
}

async function parseError(resp: Response): Promise<ApiError> {
  let body: ServiceError;
  try {
    body = (await resp.json()) as ServiceError;
  } catch {
    body = { code: "http_error", message: resp.statusText, details: {} };
  }
  return new ApiError(resp.status, body);
}

export class WorkbenchApi {
  constructor(readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, init);
    if (!resp.ok) {
      throw await parseError(resp);
    }
    return (await resp.json()) as T;
  }

  private json(body: unknown): RequestInit {
    return {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    };
  }

  createProject(id?: string): Promise<ProjectSummary> {
    return this.request("/projects", this.json(id ? { id } : {}));
  }

  getProject(id: string): Promise<ProjectSummary> {
    return this.request(`/projects/${id}`);
  }

  /** Upload an ASCII PGM (P2) image as the raw request body. */
  uploadInstance(
    projectId: string,
    pgmText: string,
    instanceId?: string,
  ): Promise<{ instance_id: string; width: number; height: number }> {
    const query = instanceId ? `?id=${encodeURIComponent(instanceId)}` : "";
    return this.request(`/projects/${projectId}/instances${query}`, {
      method: "POST",
      headers: { "content-type": "text/plain" },
      body: pgmText,
    });
  }

  submitAnnotation(
    projectId: string,
    instanceId: string,
    contributorId: string,
    cells: SubmissionCell[],
  ): Promise<AssessmentReport> {
    return this.request(
      `/projects/${projectId}/instances/${instanceId}/annotations`,
      this.json({ contributor_id: contributorId, cells }),
    );
  }

  getAssessment(projectId: string, instanceId: string): Promise<AssessmentReport> {
    return this.request(`/projects/${projectId}/instances/${instanceId}/assessment`);
  }

  startRound(projectId: string, config: RoundConfig = {}): Promise<{ token: string }> {
    return this.request(`/projects/${projectId}/rounds`, this.json(config));
  }

  getRoundStatus(projectId: string, token: string): Promise<RoundStatus> {
    return this.request(`/projects/${projectId}/rounds/${token}/status`);
  }

  getRoundHistory(projectId: string, token: string): Promise<RoundHistory> {
    return this.request(`/projects/${projectId}/rounds/${token}/history`);
  }

  getComparison(projectId: string, instanceId: string): Promise<ComparisonPayload> {
    return this.request(`/projects/${projectId}/instances/${instanceId}/comparison`);
  }

  /**
   * Poll a round until it leaves the running state.  onStatus fires for
   * every poll so the caller can chart progress.
   */
  async waitForRound(
    projectId: string,
    token: string,
    onStatus?: (status: RoundStatus) => void,
    intervalMs = 250,
    timeoutMs = 300_000,
  ): Promise<RoundStatus> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const status = await this.getRoundStatus(projectId, token);
      onStatus?.(status);
      if (status.status !== "running") {
        return status;
      }
      if (Date.now() > deadline) {
        throw new Error(`round ${token} still running after ${timeoutMs} ms`);
      }
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }
}
