/**
 * Workbench wiring: paint partial masks, submit, watch rounds, compare.
 *
 * All logic with behavior worth testing lives in brush/comparison/charts
 * and the api client; this module only binds them to the DOM.
 */

import { ApiError, WorkbenchApi } from "./api.js";
import {
  applyStroke,
  BrushMode,
  BrushState,
  createBrush,
  markSubmitted,
  toSubmissionCells,
} from "./brush.js";
import {
  AGREEMENT_LEGEND,
  buildLayers,
  CONFLICT_COLOR,
  ComparisonLayer,
  decodeBase64,
  instanceToRgba,
} from "./comparison.js";
import { buildSeries, scaleSeries, Series } from "./charts.js";
import type { AssessmentReport, ProjectSummary } from "./types.js";

const SCALE = 6; // canvas zoom: one instance pixel is SCALE x SCALE

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class Workbench {
  private api = new WorkbenchApi("");
  private projectId: string | null = null;
  private instanceId: string | null = null;
  private instanceRgba: Uint8ClampedArray | null = null;
  private width = 0;
  private height = 0;
  private brush: BrushState | null = null;
  private lastReport: AssessmentReport | null = null;
  private painting = false;

  private canvas = el<HTMLCanvasElement>("paint-canvas");
  private chartCanvas = el<HTMLCanvasElement>("chart-canvas");
  private compareCanvas = el<HTMLCanvasElement>("compare-canvas");

  constructor() {
    el<HTMLInputElement>("contributor").value =
      localStorage.getItem("miatt-forge-contributor") ?? "";
    el<HTMLButtonElement>("create-project").onclick = () => this.createProject();
    el<HTMLButtonElement>("join-project").onclick = () => this.joinProject();
    el<HTMLInputElement>("instance-file").onchange = (e) => this.uploadInstance(e);
    el<HTMLButtonElement>("submit-annotation").onclick = () => this.submit();
    el<HTMLButtonElement>("start-round").onclick = () => this.startRound();
    el<HTMLButtonElement>("load-comparison").onclick = () => this.loadComparison();
    for (const mode of ["object", "nonobject", "erase"] as BrushMode[]) {
      el<HTMLInputElement>(`mode-${mode}`).onchange = () => {
        if (this.brush) this.brush.mode = mode;
      };
    }
    el<HTMLInputElement>("brush-radius").onchange = (e) => {
      if (this.brush) this.brush.radius = Number((e.target as HTMLInputElement).value);
    };
    this.canvas.onmousedown = (e) => {
      this.painting = true;
      this.paintAt(e);
    };
    this.canvas.onmousemove = (e) => {
      if (this.painting) this.paintAt(e);
    };
    window.onmouseup = () => {
      this.painting = false;
    };
  }

  private status(text: string, isError = false): void {
    const banner = el<HTMLDivElement>("status");
    banner.textContent = text;
    banner.className = isError ? "banner error" : "banner";
  }

  private contributor(): string {
    const name = el<HTMLInputElement>("contributor").value.trim();
    if (!name) throw new Error("enter a contributor name first");
    localStorage.setItem("miatt-forge-contributor", name);
    return name;
  }

  private async createProject(): Promise<void> {
    try {
      const requested = el<HTMLInputElement>("project-id").value.trim();
      const project = await this.api.createProject(requested || undefined);
      el<HTMLInputElement>("project-id").value = project.id;
      this.setProject(project);
    } catch (err) {
      this.showError(err);
    }
  }

  private async joinProject(): Promise<void> {
    try {
      const project = await this.api.getProject(
        el<HTMLInputElement>("project-id").value.trim(),
      );
      this.setProject(project);
    } catch (err) {
      this.showError(err);
    }
  }

  private setProject(project: ProjectSummary): void {
    this.projectId = project.id;
    this.status(
      `project ${project.id}: ${project.instances.length} instance(s), ` +
        `round ${project.round_status}`,
    );
    const list = el<HTMLUListElement>("instance-list");
    list.innerHTML = "";
    for (const inst of project.instances) {
      const item = document.createElement("li");
      const link = document.createElement("a");
      link.href = "#";
      link.textContent =
        `${inst.id} (${inst.width}x${inst.height}, ` +
        `${inst.contributors.length} contributor(s), ` +
        `${inst.assessment_passed ? "passing" : "not passing"})`;
      link.onclick = (e) => {
        e.preventDefault();
        void this.openInstance(inst.id);
      };
      item.appendChild(link);
      list.appendChild(item);
    }
  }

  private async uploadInstance(event: Event): Promise<void> {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file || !this.projectId) return;
    try {
      const text = await file.text();
      const created = await this.api.uploadInstance(this.projectId, text);
      await this.joinProject();
      await this.openInstance(created.instance_id);
    } catch (err) {
      this.showError(err);
    }
  }

  private async openInstance(instanceId: string): Promise<void> {
    if (!this.projectId) return;
    // the comparison endpoint needs a model; the raw image is always needed,
    // so keep a local grayscale copy from the upload via assessment metadata
    this.instanceId = instanceId;
    const project = await this.api.getProject(this.projectId);
    const info = project.instances.find((i) => i.id === instanceId);
    if (!info) return;
    this.width = info.width;
    this.height = info.height;
    this.brush = createBrush(this.width, this.height, Number(
      el<HTMLInputElement>("brush-radius").value,
    ));
    this.instanceRgba = null;
    this.canvas.width = this.width * SCALE;
    this.canvas.height = this.height * SCALE;
    this.lastReport = await this.api.getAssessment(this.projectId, instanceId);
    this.renderPaint();
    this.renderAssessment();
  }

  private paintAt(event: MouseEvent): void {
    if (!this.brush) return;
    const rect = this.canvas.getBoundingClientRect();
    const x = Math.floor((event.clientX - rect.left) / SCALE);
    const y = Math.floor((event.clientY - rect.top) / SCALE);
    applyStroke(this.brush, x, y);
    this.renderPaint();
  }

  private renderPaint(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || !this.brush) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.instanceRgba) {
      this.blit(ctx, this.instanceRgba, this.canvas);
    } else {
      ctx.fillStyle = "#222";
      ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    }
    for (const [pixel, label] of this.brush.cells) {
      const x = pixel % this.width;
      const y = Math.floor(pixel / this.width);
      ctx.fillStyle = label === "O" ? "rgba(40,120,255,0.75)" : "rgba(15,40,90,0.6)";
      ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
    }
    if (this.lastReport) {
      const [r, g, b] = CONFLICT_COLOR;
      ctx.fillStyle = `rgba(${r},${g},${b},0.9)`;
      for (const [pixel] of this.lastReport.conflicts) {
        const x = pixel % this.width;
        const y = Math.floor(pixel / this.width);
        ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
      }
    }
  }

  private blit(
    ctx: CanvasRenderingContext2D,
    rgba: Uint8ClampedArray,
    target: HTMLCanvasElement,
  ): void {
    const off = document.createElement("canvas");
    off.width = this.width;
    off.height = this.height;
    const octx = off.getContext("2d");
    if (!octx) return;
    octx.putImageData(new ImageData(new Uint8ClampedArray(rgba), this.width, this.height), 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(off, 0, 0, target.width, target.height);
  }

  private renderAssessment(): void {
    const report = this.lastReport;
    if (!report) return;
    if (!report.count_ok) {
      this.status("need at least 2 contributors before this instance can pass");
    } else if (!report.consistent) {
      this.status(
        `${report.conflicts.length} conflicting pixel(s) highlighted; ` +
          "contributors can erase or repaint their own cells to resolve",
        true,
      );
    } else {
      this.status(
        `assessment ${report.passed ? "passes" : "fails"}; coverage ` +
          `${report.covered_pixels}/${report.total_pixels}`,
      );
    }
  }

  private async submit(): Promise<void> {
    if (!this.projectId || !this.instanceId || !this.brush) return;
    try {
      this.lastReport = await this.api.submitAnnotation(
        this.projectId,
        this.instanceId,
        this.contributor(),
        toSubmissionCells(this.brush),
      );
      markSubmitted(this.brush);
      this.renderPaint();
      this.renderAssessment();
    } catch (err) {
      this.showError(err);
    }
  }

  private async startRound(): Promise<void> {
    if (!this.projectId) return;
    const button = el<HTMLButtonElement>("start-round");
    try {
      const { token } = await this.api.startRound(this.projectId, {});
      button.disabled = true;
      const final = await this.api.waitForRound(this.projectId, token, (status) => {
        this.status(`round ${token}: ${status.status}, epoch ${status.epoch}`);
        void this.drawChart(token);
      });
      button.disabled = false;
      await this.drawChart(token);
      this.status(
        final.status === "done"
          ? `round ${token} done, selected epoch ${final.selected_epoch}`
          : `round ${token} ${final.status}: ${final.error ?? ""}`,
        final.status !== "done",
      );
    } catch (err) {
      button.disabled = false;
      this.showError(err);
    }
  }

  private async drawChart(token: string): Promise<void> {
    if (!this.projectId) return;
    const history = await this.api.getRoundHistory(this.projectId, token);
    if (history.records.length === 0) return;
    const series = buildSeries(history.records);
    const ctx = this.chartCanvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.chartCanvas;
    ctx.clearRect(0, 0, width, height);
    const panel = height / 3 - 12;
    const draw = (s: Series, row: number, color: string) => {
      const top = row * (panel + 12) + 10;
      ctx.strokeStyle = "#888";
      ctx.strokeRect(40, top, width - 50, panel);
      ctx.fillStyle = "#ddd";
      ctx.fillText(s.name, 4, top + 10);
      ctx.strokeStyle = color;
      for (const segment of scaleSeries(s, width - 50, panel)) {
        ctx.beginPath();
        segment.forEach((p, i) => {
          if (i === 0) ctx.moveTo(40 + p.x, top + p.y);
          else ctx.lineTo(40 + p.x, top + p.y);
        });
        ctx.stroke();
      }
    };
    draw(series.liou, 0, "#7fd");
    draw(series.lerrors, 1, "#fa5");
    draw(series.loss, 2, "#7af");
  }

  private async loadComparison(): Promise<void> {
    if (!this.projectId || !this.instanceId) return;
    try {
      const payload = await this.api.getComparison(this.projectId, this.instanceId);
      this.instanceRgba = instanceToRgba(decodeBase64(payload.instance));
      const layers = buildLayers(payload);
      this.compareCanvas.width = payload.width * SCALE;
      this.compareCanvas.height = payload.height * SCALE;
      const toggles = el<HTMLDivElement>("layer-toggles");
      toggles.innerHTML = "";
      const render = () => this.renderComparison(layers);
      for (const layer of layers) {
        const label = document.createElement("label");
        const box = document.createElement("input");
        box.type = "checkbox";
        box.checked = layer.visible;
        box.onchange = () => {
          layer.visible = box.checked;
          render();
        };
        label.appendChild(box);
        label.appendChild(document.createTextNode(" " + layer.label));
        toggles.appendChild(label);
      }
      const legend = el<HTMLUListElement>("legend");
      legend.innerHTML = "";
      for (const entry of AGREEMENT_LEGEND) {
        const item = document.createElement("li");
        const [r, g, b] = entry.color;
        item.innerHTML =
          `<span class="swatch" style="background: rgb(${r},${g},${b})"></span>` +
          ` ${entry.label}: ${payload.agreement_counts[entry.key]}`;
        legend.appendChild(item);
      }
      // metric panel: served numbers verbatim
      const panel = el<HTMLDivElement>("metric-panel");
      panel.textContent = Object.entries(payload.metrics)
        .map(([k, v]) => `${k}: ${v === null ? "n/a" : v}`)
        .join("   ");
      render();
    } catch (err) {
      this.showError(err);
    }
  }

  private renderComparison(layers: ComparisonLayer[]): void {
    const ctx = this.compareCanvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.compareCanvas.width, this.compareCanvas.height);
    for (const layer of layers) {
      if (layer.visible) {
        this.blit(ctx, layer.rgba, this.compareCanvas);
      }
    }
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      let extra = "";
      const failing = (err.details as { failing?: { instance: string }[] }).failing;
      if (failing) {
        extra = "; failing instances: " + failing.map((f) => f.instance).join(", ");
      }
      this.status(`${err.code}: ${err.message}${extra}`, true);
    } else {
      this.status(String(err), true);
    }
  }
}

new Workbench();
