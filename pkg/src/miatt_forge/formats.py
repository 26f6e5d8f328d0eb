"""Text-based, codec-free file formats for the pipeline.

All formats are pure ASCII so they diff cleanly and can be parsed from any
language:

* ``.mlab`` masks: header line ``MLAB1``, then ``<width> <height>``, then
  height rows of width characters from {O, N, U}.
* instance images: ASCII PGM (P2, maxval 255), pixel = round(value*255).
* overlays: ASCII PPM (P3) with the fixed colors in ``report``.
* manifest / metrics / checkpoints: JSON, UTF-8, keys in a fixed order.
* training history: CSV with the exact column set below.

Undefined metrics serialize as JSON ``null`` and as the CSV token ``nan``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import CHAR_STATES, Instance, PartialLabeling, ProbabilityMap
from .generate import GenParams, SceneParams
from .laf import ConfusionCounts, LafParams, MetricSet, ZeroDivisionPolicy
from .learn import Model, TrainConfig, TrainHistory

MLAB_MAGIC = "MLAB1"
HISTORY_COLUMNS = (
    "epoch,loss,LTP,LFP,LTN,LFN,LPrecision,LRecall,LF1,LAccuracy,LIoU,LErrors"
)
MANIFEST_VERSION = 1
CHECKPOINT_VERSION = 1


class FileFormatError(ValueError):
    """A file violated its format; the message names the file and the rule."""

    def __init__(self, path, rule: str):
        self.path = str(path)
        self.rule = rule
        super().__init__(f"{path}: {rule}")


# ---------------------------------------------------------------------------
# .mlab masks
# ---------------------------------------------------------------------------

def labeling_to_mlab(t: PartialLabeling) -> str:
    lines = [MLAB_MAGIC, f"{t.width} {t.height}"]
    lines.extend(t.rows())
    return "\n".join(lines) + "\n"


def mlab_to_labeling(text: str, source: str = "<string>") -> PartialLabeling:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MLAB_MAGIC:
        raise FileFormatError(source, f"first line must be the magic token {MLAB_MAGIC!r}")
    if len(lines) < 2:
        raise FileFormatError(source, "missing dimension line '<width> <height>'")
    parts = lines[1].split()
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise FileFormatError(source, "dimension line must be '<width> <height>'")
    width, height = int(parts[0]), int(parts[1])
    if width < 1 or height < 1:
        raise FileFormatError(source, "width and height must be positive")
    rows = lines[2 : 2 + height]
    if len(rows) != height:
        raise FileFormatError(source, f"expected {height} mask rows, found {len(rows)}")
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FileFormatError(source, f"row {i + 3} has {len(row)} cells, expected {width}")
        bad = set(row) - set(CHAR_STATES)
        if bad:
            raise FileFormatError(source, f"row {i + 3} has invalid cell character(s) {sorted(bad)}")
    return PartialLabeling.from_rows(rows)


def write_mlab(path: Union[str, Path], t: PartialLabeling) -> None:
    Path(path).write_text(labeling_to_mlab(t), encoding="ascii")


def read_mlab(path: Union[str, Path]) -> PartialLabeling:
    p = Path(path)
    if not p.exists():
        raise FileFormatError(p, "file does not exist")
    return mlab_to_labeling(p.read_text(encoding="ascii"), source=str(p))


# ---------------------------------------------------------------------------
# PGM images
# ---------------------------------------------------------------------------

def grid_to_pgm(values: np.ndarray) -> str:
    """values in [0, 1], shape (height, width) -> ASCII PGM text."""
    levels = np.round(np.asarray(values, dtype=np.float64) * 255.0).astype(int)
    h, w = levels.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in levels)
    return "\n".join(lines) + "\n"


def pgm_to_grid(text: str, source: str = "<string>") -> np.ndarray:
    tokens: list[str] = []
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        tokens.extend(body.split())
    if not tokens or tokens[0] != "P2":
        raise FileFormatError(source, "must start with the ASCII PGM magic 'P2'")
    if len(tokens) < 4:
        raise FileFormatError(source, "header must be 'P2 <width> <height> <maxval>'")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise FileFormatError(source, "width/height/maxval must be integers") from None
    if width < 1 or height < 1 or maxval < 1:
        raise FileFormatError(source, "width, height and maxval must be positive")
    values = tokens[4:]
    if len(values) != width * height:
        raise FileFormatError(
            source, f"expected {width * height} pixel values, found {len(values)}"
        )
    try:
        arr = np.array([int(v) for v in values], dtype=np.float64)
    except ValueError:
        raise FileFormatError(source, "pixel values must be integers") from None
    if arr.min() < 0 or arr.max() > maxval:
        raise FileFormatError(source, f"pixel values must lie in [0, {maxval}]")
    return (arr / maxval).reshape(height, width)


def write_instance_pgm(path: Union[str, Path], instance: Instance) -> None:
    Path(path).write_text(grid_to_pgm(instance.pixels), encoding="ascii")


def read_instance_pgm(path: Union[str, Path]) -> Instance:
    p = Path(path)
    if not p.exists():
        raise FileFormatError(p, "file does not exist")
    return Instance(pgm_to_grid(p.read_text(encoding="ascii"), source=str(p)))


def read_probability_pgm(path: Union[str, Path]) -> ProbabilityMap:
    p = Path(path)
    if not p.exists():
        raise FileFormatError(p, "file does not exist")
    return ProbabilityMap(pgm_to_grid(p.read_text(encoding="ascii"), source=str(p)))


# ---------------------------------------------------------------------------
# PPM overlays
# ---------------------------------------------------------------------------

def rgb_to_ppm(rgb: np.ndarray) -> str:
    """(height, width, 3) uint8 -> ASCII PPM text."""
    h, w, _ = rgb.shape
    lines = ["P3", f"{w} {h}", "255"]
    for row in rgb:
        lines.append(" ".join(str(int(v)) for px in row for v in px))
    return "\n".join(lines) + "\n"


def write_ppm(path: Union[str, Path], rgb: np.ndarray) -> None:
    Path(path).write_text(rgb_to_ppm(rgb), encoding="ascii")


def ppm_to_rgb(text: str, source: str = "<string>") -> np.ndarray:
    tokens: list[str] = []
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        tokens.extend(body.split())
    if not tokens or tokens[0] != "P3":
        raise FileFormatError(source, "must start with the ASCII PPM magic 'P3'")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    values = [int(v) for v in tokens[4:]]
    if len(values) != width * height * 3:
        raise FileFormatError(source, "wrong number of color samples")
    if maxval != 255:
        raise FileFormatError(source, "maxval must be 255")
    return np.array(values, dtype=np.uint8).reshape(height, width, 3)


# ---------------------------------------------------------------------------
# parameter records and the run manifest
# ---------------------------------------------------------------------------

def scene_params_to_dict(p: SceneParams) -> dict:
    return {
        "width": p.width,
        "height": p.height,
        "lane_half_width": p.lane_half_width,
        "lane_angle": p.lane_angle,
        "lane_offset": p.lane_offset,
        "lane_intensity": p.lane_intensity,
        "background_intensity": p.background_intensity,
        "noise_sigma": p.noise_sigma,
        "seed": p.seed,
    }


def gen_params_to_dict(p: GenParams) -> dict:
    return {
        "n_targets": p.n_targets,
        "object_coverage_range": list(p.object_coverage_range),
        "nonobject_coverage_range": list(p.nonobject_coverage_range),
        "blob_seeds_per_target": p.blob_seeds_per_target,
        "target_collective_coverage": p.target_collective_coverage,
        "seed": p.seed,
    }


def laf_params_to_dict(p: LafParams) -> dict:
    return {
        "binarize_threshold": p.binarize_threshold,
        "zero_division_policy": p.zero_division_policy.value,
        "metric_selection": list(p.metric_selection),
    }


def train_config_to_dict(c: TrainConfig) -> dict:
    return {
        "alpha": list(c.alpha) if c.alpha is not None else None,
        "learning_rate": c.learning_rate,
        "momentum": c.momentum,
        "max_epochs": c.max_epochs,
        "eval_every": c.eval_every,
        "stop_liou_min": c.stop_liou_min,
        "stop_lerrors_max": c.stop_lerrors_max,
        "prob_clamp_epsilon": c.prob_clamp_epsilon,
        "patch_radius": c.patch_radius,
        "hidden_width": c.hidden_width,
        "seed": c.seed,
    }


def scene_params_from_dict(d: dict) -> SceneParams:
    return SceneParams(**d)


def gen_params_from_dict(d: dict) -> GenParams:
    d = dict(d)
    d["object_coverage_range"] = tuple(d["object_coverage_range"])
    d["nonobject_coverage_range"] = tuple(d["nonobject_coverage_range"])
    return GenParams(**d)


def laf_params_from_dict(d: dict) -> LafParams:
    return LafParams(
        binarize_threshold=d["binarize_threshold"],
        zero_division_policy=ZeroDivisionPolicy(d["zero_division_policy"]),
        metric_selection=tuple(d["metric_selection"]),
    )


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    if d.get("alpha") is not None:
        d["alpha"] = tuple(d["alpha"])
    return TrainConfig(**d)


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run byte-for-byte."""

    scene_params: SceneParams
    gen_params: GenParams
    laf_params: LafParams
    train_config: TrainConfig
    format_version: int = MANIFEST_VERSION
    created_at: str = ""

    @staticmethod
    def now_timestamp() -> str:
        return datetime.now(timezone.utc).isoformat(timespec="seconds")


def manifest_to_json(m: RunManifest) -> str:
    payload = {
        "format_version": m.format_version,
        "created_at": m.created_at,
        "scene_params": scene_params_to_dict(m.scene_params),
        "gen_params": gen_params_to_dict(m.gen_params),
        "laf_params": laf_params_to_dict(m.laf_params),
        "train_config": train_config_to_dict(m.train_config),
    }
    return json.dumps(payload, indent=2) + "\n"


def manifest_from_json(text: str, source: str = "<string>") -> RunManifest:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(source, f"invalid JSON: {exc}") from None
    try:
        if d["format_version"] != MANIFEST_VERSION:
            raise FileFormatError(
                source, f"unsupported format_version {d['format_version']}"
            )
        return RunManifest(
            scene_params=scene_params_from_dict(d["scene_params"]),
            gen_params=gen_params_from_dict(d["gen_params"]),
            laf_params=laf_params_from_dict(d["laf_params"]),
            train_config=train_config_from_dict(d["train_config"]),
            format_version=d["format_version"],
            created_at=d.get("created_at", ""),
        )
    except KeyError as exc:
        raise FileFormatError(source, f"missing manifest key {exc}") from None


def write_manifest(path: Union[str, Path], m: RunManifest) -> None:
    Path(path).write_text(manifest_to_json(m), encoding="utf-8")


def read_manifest(path: Union[str, Path]) -> RunManifest:
    p = Path(path)
    if not p.exists():
        raise FileFormatError(p, "file does not exist")
    return manifest_from_json(p.read_text(encoding="utf-8"), source=str(p))


# ---------------------------------------------------------------------------
# metrics and history
# ---------------------------------------------------------------------------

def metrics_to_json(counts: ConfusionCounts, metrics: MetricSet, params: LafParams) -> str:
    payload = {
        "counts": counts.as_dict(),
        "metrics": metrics.as_dict(params.metric_selection),
    }
    return json.dumps(payload, indent=2) + "\n"


def _csv_number(v: Optional[float]) -> str:
    return "nan" if v is None else repr(float(v))


def history_to_csv(history: TrainHistory) -> str:
    lines = [HISTORY_COLUMNS]
    for r in history.records:
        c, m = r.counts, r.metrics
        lines.append(
            ",".join(
                [
                    str(r.epoch),
                    repr(r.loss),
                    str(c.ltp),
                    str(c.lfp),
                    str(c.ltn),
                    str(c.lfn),
                    _csv_number(m.lprecision),
                    _csv_number(m.lrecall),
                    _csv_number(m.lf1),
                    _csv_number(m.laccuracy),
                    _csv_number(m.liou),
                    str(m.lerrors),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def write_history_csv(path: Union[str, Path], history: TrainHistory) -> None:
    Path(path).write_text(history_to_csv(history), encoding="ascii")


def _csv_value(token: str) -> Optional[float]:
    return None if token == "nan" else float(token)


def history_from_csv(text: str, source: str = "<string>") -> list[dict]:
    """Parse history rows into dicts (epoch, loss, counts and metric columns)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != HISTORY_COLUMNS:
        raise FileFormatError(source, f"header must be exactly '{HISTORY_COLUMNS}'")
    rows = []
    names = HISTORY_COLUMNS.split(",")
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(names):
            raise FileFormatError(source, f"line {i}: expected {len(names)} columns")
        row: dict = {}
        for name, token in zip(names, parts):
            if name in ("epoch", "LTP", "LFP", "LTN", "LFN", "LErrors"):
                row[name] = int(token)
            else:
                row[name] = _csv_value(token)
        rows.append(row)
    return rows


def read_history_csv(path: Union[str, Path]) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise FileFormatError(p, "file does not exist")
    return history_from_csv(p.read_text(encoding="ascii"), source=str(p))


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------

def model_to_json(model: Model) -> str:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "patch_radius": model.patch_radius,
        "hidden_width": model.hidden_width,
        "weights_in": [[float(v) for v in row] for row in model.weights_in],
        "bias_in": [float(v) for v in model.bias_in],
        "weights_out": [float(v) for v in model.weights_out],
        "bias_out": model.bias_out,
    }
    return json.dumps(payload, indent=2) + "\n"


def model_from_json(text: str, source: str = "<string>") -> Model:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(source, f"invalid JSON: {exc}") from None
    try:
        if d["format_version"] != CHECKPOINT_VERSION:
            raise FileFormatError(source, f"unsupported format_version {d['format_version']}")
        return Model(
            patch_radius=d["patch_radius"],
            hidden_width=d["hidden_width"],
            weights_in=np.array(d["weights_in"], dtype=np.float64),
            bias_in=np.array(d["bias_in"], dtype=np.float64),
            weights_out=np.array(d["weights_out"], dtype=np.float64),
            bias_out=float(d["bias_out"]),
        )
    except KeyError as exc:
        raise FileFormatError(source, f"missing checkpoint key {exc}") from None


def write_model(path: Union[str, Path], model: Model) -> None:
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def read_model(path: Union[str, Path]) -> Model:
    p = Path(path)
    if not p.exists():
        raise FileFormatError(p, "file does not exist")
    return model_from_json(p.read_text(encoding="utf-8"), source=str(p))


def selected_to_json(history: TrainHistory, params: LafParams) -> str:
    """Selected-epoch summary written next to history.csv."""
    record = history.record_at(history.selected_epoch)
    payload = {
        "selected_epoch": history.selected_epoch,
        "loss": record.loss,
        "counts": record.counts.as_dict(),
        "metrics": record.metrics.as_dict(params.metric_selection),
    }
    return json.dumps(payload, indent=2) + "\n"
