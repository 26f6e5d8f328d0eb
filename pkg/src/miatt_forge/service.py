"""HTTP service for the participatory annotation and training loop.

Contributors post sparse partial annotations per instance (one living target
per contributor, latest submission wins), inspect assessment including every
conflicting pixel, launch background training rounds, and fetch metric
histories and per-pixel comparison payloads for canvas rendering.

State is an append-only JSONL event log per project under the data
directory; startup replays the logs, so project state is always a pure fold
of the submission history.  Served numbers are produced by the evaluation
module on the stored data, never recomputed client-side or cached stale.
"""

from __future__ import annotations

import base64
import json
import threading
import uuid
from collections import OrderedDict
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .core import (
    NONOBJECT,
    OBJECT,
    AssessmentReport,
    Instance,
    MiattSet,
    PartialLabeling,
    assess_miatts,
    derive_ltt,
)
from .formats import (
    FileFormatError,
    model_from_json,
    model_to_json,
    pgm_to_grid,
    train_config_from_dict,
    train_config_to_dict,
)
from .laf import LafParams, binarize, evaluate
from .learn import Model, TrainConfig, TrainRecord, forward, train_uttl
from .report import agreement_classes

_CELL_CHAR = {"O": int(OBJECT), "N": int(NONOBJECT)}


class ApiError(Exception):
    """Carried to the client as JSON {code, message, details}."""

    def __init__(self, status: int, code: str, message: str, details=None):
        self.status = status
        self.code = code
        self.message = message
        self.details = details if details is not None else {}
        super().__init__(message)


class StoredInstance:
    def __init__(self, iid: str, instance: Instance):
        self.iid = iid
        self.instance = instance
        # contributor -> tuple of (pixel, state); latest submission replaces,
        # target order = order of first submission
        self.submissions: "OrderedDict[str, tuple[tuple[int, int], ...]]" = OrderedDict()

    def miatt_set(self) -> MiattSet:
        targets = []
        size = self.instance.height * self.instance.width
        for cells in self.submissions.values():
            flat = np.zeros(size, dtype=np.int8)
            for pixel, state in cells:
                flat[pixel] = state
            targets.append(
                PartialLabeling(flat.reshape(self.instance.height, self.instance.width))
            )
        return MiattSet(tuple(targets))

    def assessment(self) -> Optional[AssessmentReport]:
        m = self.miatt_set()
        if len(m) == 0:
            return None
        return assess_miatts(m)


class RoundState:
    def __init__(self, token: str, config: TrainConfig):
        self.token = token
        self.config = config
        self.status = "running"
        self.progress_epoch = 0
        self.records: list[dict] = []
        self.selected_epoch: Optional[int] = None
        self.error: Optional[str] = None

    def status_dict(self) -> dict:
        out = {"token": self.token, "status": self.status, "epoch": self.progress_epoch}
        if self.selected_epoch is not None:
            out["selected_epoch"] = self.selected_epoch
        if self.error is not None:
            out["error"] = self.error
        return out


class Project:
    def __init__(self, pid: str):
        self.id = pid
        self.instances: "OrderedDict[str, StoredInstance]" = OrderedDict()
        self.rounds: "OrderedDict[str, RoundState]" = OrderedDict()
        self.latest_model: Optional[Model] = None
        self.lock = threading.Lock()

    def running_round(self) -> Optional[RoundState]:
        for r in self.rounds.values():
            if r.status == "running":
                return r
        return None

    def round_status(self) -> str:
        if self.running_round() is not None:
            return "running"
        if any(r.status == "done" for r in self.rounds.values()):
            return "done"
        return "idle"


def _record_to_dict(record: TrainRecord) -> dict:
    return {
        "epoch": record.epoch,
        "loss": record.loss,
        "counts": record.counts.as_dict(),
        "metrics": record.metrics.as_dict(),
    }


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class ProjectStore:
    """In-memory state plus the append-only event log under data_dir."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.projects: dict[str, Project] = {}
        self._store_lock = threading.Lock()
        self._replay_all()

    # -- event log ---------------------------------------------------------

    def _log_path(self, pid: str) -> Path:
        return self.data_dir / f"{pid}.jsonl"

    def _append(self, pid: str, event: dict) -> None:
        with self._log_path(pid).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")

    def _replay_all(self) -> None:
        for path in sorted(self.data_dir.glob("*.jsonl")):
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._apply(json.loads(line))
        # rounds interrupted by a restart can never finish
        for project in self.projects.values():
            for r in project.rounds.values():
                if r.status == "running":
                    r.status = "failed"
                    r.error = "interrupted by service restart"

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "project_created":
            self.projects[event["project"]] = Project(event["project"])
            return
        project = self.projects[event["project"]]
        if kind == "instance_added":
            grid = pgm_to_grid(event["pgm"], source=f"<log:{project.id}>")
            project.instances[event["instance"]] = StoredInstance(
                event["instance"], Instance(grid)
            )
        elif kind == "annotation":
            stored = project.instances[event["instance"]]
            cells = tuple((int(p), int(s)) for p, s in event["cells"])
            if cells:
                # assignment keeps an existing contributor's position, so
                # target order stays the order of first submission
                stored.submissions[event["contributor"]] = cells
            else:
                stored.submissions.pop(event["contributor"], None)
        elif kind == "round_started":
            cfg = train_config_from_dict(event["config"])
            project.rounds[event["token"]] = RoundState(event["token"], cfg)
        elif kind == "round_finished":
            r = project.rounds[event["token"]]
            r.status = "done"
            r.records = event["records"]
            r.selected_epoch = event["selected_epoch"]
            r.progress_epoch = event["records"][-1]["epoch"] if event["records"] else 0
            project.latest_model = model_from_json(event["model"])
        elif kind == "round_failed":
            r = project.rounds[event["token"]]
            r.status = "failed"
            r.error = event["error"]

    # -- operations --------------------------------------------------------

    def create_project(self, pid: Optional[str] = None) -> Project:
        with self._store_lock:
            pid = pid or uuid.uuid4().hex[:12]
            if pid in self.projects:
                raise ApiError(409, "project_exists", f"project {pid!r} already exists")
            project = Project(pid)
            self.projects[pid] = project
            self._append(pid, {"event": "project_created", "project": pid})
            return project

    def get_project(self, pid: str) -> Project:
        project = self.projects.get(pid)
        if project is None:
            raise ApiError(404, "unknown_project", f"no project {pid!r}")
        return project

    def add_instance(self, pid: str, pgm_text: str, iid: Optional[str] = None) -> StoredInstance:
        project = self.get_project(pid)
        try:
            grid = pgm_to_grid(pgm_text, source="<upload>")
        except FileFormatError as exc:
            raise ApiError(422, "invalid_pgm", str(exc)) from exc
        with project.lock:
            iid = iid or f"i{len(project.instances)}"
            if iid in project.instances:
                raise ApiError(409, "instance_exists", f"instance {iid!r} already exists")
            stored = StoredInstance(iid, Instance(grid))
            project.instances[iid] = stored
            self._append(pid, {"event": "instance_added", "project": pid,
                               "instance": iid, "pgm": pgm_text})
            return stored

    def get_instance(self, pid: str, iid: str) -> tuple[Project, StoredInstance]:
        project = self.get_project(pid)
        stored = project.instances.get(iid)
        if stored is None:
            raise ApiError(404, "unknown_instance", f"no instance {iid!r} in project {pid!r}")
        return project, stored

    def submit_annotation(
        self, pid: str, iid: str, contributor: str, cells: list[tuple[int, str]]
    ) -> AssessmentReport:
        project, stored = self.get_instance(pid, iid)
        size = stored.instance.height * stored.instance.width
        seen = set()
        parsed = []
        for pixel, label in cells:
            if not (0 <= pixel < size):
                raise ApiError(422, "cell_out_of_range",
                               f"pixel {pixel} outside domain of {size} pixels")
            if pixel in seen:
                raise ApiError(422, "duplicate_cell", f"pixel {pixel} appears twice")
            if label not in _CELL_CHAR:
                raise ApiError(422, "invalid_label", f"label must be 'O' or 'N', got {label!r}")
            seen.add(pixel)
            parsed.append((pixel, _CELL_CHAR[label]))
        if len(parsed) >= size:
            raise ApiError(422, "not_partial",
                           "a submission must stay strictly partial for its instance")
        with project.lock:
            if parsed:
                stored.submissions[contributor] = tuple(parsed)
            else:
                # an empty submission retracts the contributor's target
                stored.submissions.pop(contributor, None)
            self._append(pid, {
                "event": "annotation", "project": pid, "instance": iid,
                "contributor": contributor,
                "cells": [[p, s] for p, s in parsed],
            })
            report = stored.assessment()
        if report is None:
            raise ApiError(409, "no_targets_left",
                           "the retraction removed the last annotation")
        return report

    def start_round(self, pid: str, cfg: TrainConfig, laf: LafParams = LafParams()) -> RoundState:
        project = self.get_project(pid)
        with project.lock:
            if project.running_round() is not None:
                raise ApiError(409, "round_running", "a training round is already running")
            if not project.instances:
                raise ApiError(412, "no_instances", "project has no instances to train on")
            failing = []
            dataset = []
            for stored in project.instances.values():
                m = stored.miatt_set()
                report = assess_miatts(m) if len(m) else None
                if report is None or not report.passed:
                    failing.append({
                        "instance": stored.iid,
                        "reason": report.failure_summary() if report else "no annotations",
                        "conflicts": [list(c) for c in report.conflicts] if report else [],
                    })
                else:
                    dataset.append((stored.instance, m))
            if failing:
                raise ApiError(412, "assessment_failed",
                               "some instances do not pass assessment",
                               details={"failing": failing})
            token = f"round-{len(project.rounds) + 1}"
            state = RoundState(token, cfg)
            project.rounds[token] = state
            self._append(pid, {"event": "round_started", "project": pid, "token": token,
                               "config": train_config_to_dict(cfg)})
        thread = threading.Thread(
            target=self._run_round, args=(project, state, dataset, laf), daemon=True
        )
        thread.start()
        return state

    def _run_round(self, project: Project, state: RoundState,
                   dataset: list, laf: LafParams) -> None:
        def on_record(record: TrainRecord) -> None:
            with project.lock:
                state.records.append(_record_to_dict(record))
                state.progress_epoch = record.epoch

        try:
            model, history = train_uttl(dataset, state.config, laf, on_record=on_record)
        except Exception as exc:  # surfaced via round status
            with project.lock:
                state.status = "failed"
                state.error = str(exc)
                self._append(project.id, {"event": "round_failed", "project": project.id,
                                          "token": state.token, "error": str(exc)})
            return
        with project.lock:
            state.status = "done"
            state.selected_epoch = history.selected_epoch
            project.latest_model = model
            self._append(project.id, {
                "event": "round_finished", "project": project.id, "token": state.token,
                "selected_epoch": history.selected_epoch,
                "records": state.records,
                "model": model_to_json(model),
            })

    def get_round(self, pid: str, token: str) -> tuple[Project, RoundState]:
        project = self.get_project(pid)
        state = project.rounds.get(token)
        if state is None:
            raise ApiError(404, "unknown_round", f"no round {token!r} in project {pid!r}")
        return project, state

    def comparison(self, pid: str, iid: str, laf: LafParams = LafParams()) -> dict:
        project, stored = self.get_instance(pid, iid)
        with project.lock:
            model = project.latest_model
            m = stored.miatt_set()
        if model is None:
            raise ApiError(409, "no_model", "no completed training round yet")
        if len(m) == 0:
            raise ApiError(409, "no_annotations", "instance has no annotations to compare")
        report = assess_miatts(m)
        if not report.passed:
            raise ApiError(409, "assessment_failed",
                           "instance annotations do not pass assessment",
                           details=report.as_dict())
        pred = binarize(forward(model, stored.instance), laf.binarize_threshold)
        ltt = derive_ltt(m)
        counts, metrics = evaluate(pred, m, laf)
        classes = agreement_classes(pred, ltt)
        gray = np.round(stored.instance.pixels * 255.0).astype(np.uint8)
        payload = {
            "instance_id": iid,
            "width": stored.instance.width,
            "height": stored.instance.height,
            "instance": _b64(gray.tobytes()),
            "prediction": _b64(pred.flat().astype(np.uint8).tobytes()),
            "ltt": _b64(ltt.flat().astype(np.uint8).tobytes()),
            "targets": [
                {"contributor": contributor, "cells": _b64(t.flat().astype(np.uint8).tobytes())}
                for contributor, t in zip(stored.submissions.keys(), m.targets)
            ],
            "agreement": _b64(classes.tobytes()),
            "agreement_counts": {
                "agree_object": int((classes == 1).sum()),
                "agree_nonobject": int((classes == 2).sum()),
                "false_positive": int((classes == 3).sum()),
                "false_negative": int((classes == 4).sum()),
                "undetermined": int((classes == 0).sum()),
            },
            "counts": counts.as_dict(),
            "metrics": metrics.as_dict(),
        }
        return payload


# ---------------------------------------------------------------------------
# FastAPI wiring
# ---------------------------------------------------------------------------

class CreateProjectBody(BaseModel):
    id: Optional[str] = None


class AnnotationBody(BaseModel):
    contributor_id: str = Field(min_length=1)
    cells: list[tuple[int, Literal["O", "N"]]]


class RoundBody(BaseModel):
    alpha: Optional[list[float]] = None
    learning_rate: Optional[float] = None
    momentum: Optional[float] = None
    max_epochs: Optional[int] = None
    eval_every: Optional[int] = None
    stop_liou_min: Optional[float] = None
    stop_lerrors_max: Optional[int] = None
    prob_clamp_epsilon: Optional[float] = None
    patch_radius: Optional[int] = None
    hidden_width: Optional[int] = None
    seed: Optional[int] = None

    def to_config(self) -> TrainConfig:
        base = train_config_to_dict(TrainConfig())
        overrides = {k: v for k, v in self.model_dump().items() if v is not None}
        base.update(overrides)
        try:
            return train_config_from_dict(base)
        except ValueError as exc:
            raise ApiError(422, "invalid_config", str(exc)) from exc


def _project_dict(project: Project) -> dict:
    instances = []
    for stored in project.instances.values():
        report = stored.assessment()
        instances.append({
            "id": stored.iid,
            "width": stored.instance.width,
            "height": stored.instance.height,
            "contributors": list(stored.submissions.keys()),
            "assessment_passed": bool(report.passed) if report is not None else False,
        })
    return {
        "id": project.id,
        "instances": instances,
        "round_status": project.round_status(),
        "rounds": [r.status_dict() for r in project.rounds.values()],
        "has_model": project.latest_model is not None,
    }


def create_app(data_dir: Path) -> FastAPI:
    app = FastAPI(title="miatt-forge supervision service")
    store = ProjectStore(data_dir)
    app.state.store = store

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "details": exc.details},
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={
                "code": "validation_error",
                "message": "request body failed validation",
                "details": {"errors": exc.errors()},
            },
        )

    @app.post("/projects", status_code=201)
    async def create_project(body: Optional[CreateProjectBody] = None):
        project = store.create_project(body.id if body else None)
        return _project_dict(project)

    @app.get("/projects/{pid}")
    async def get_project(pid: str):
        return _project_dict(store.get_project(pid))

    @app.post("/projects/{pid}/instances", status_code=201)
    async def add_instance(pid: str, request: Request, id: Optional[str] = None):
        body = (await request.body()).decode("ascii", errors="replace")
        stored = store.add_instance(pid, body, id)
        return {
            "instance_id": stored.iid,
            "width": stored.instance.width,
            "height": stored.instance.height,
        }

    @app.post("/projects/{pid}/instances/{iid}/annotations")
    async def submit_annotation(pid: str, iid: str, body: AnnotationBody):
        report = store.submit_annotation(
            pid, iid, body.contributor_id, [tuple(c) for c in body.cells]
        )
        return report.as_dict()

    @app.get("/projects/{pid}/instances/{iid}/assessment")
    async def get_assessment(pid: str, iid: str):
        _, stored = store.get_instance(pid, iid)
        report = stored.assessment()
        if report is None:
            return {"count_ok": False, "partial_flags": [], "consistent": True,
                    "conflicts": [], "coverage": 0.0, "covered_pixels": 0,
                    "total_pixels": stored.instance.width * stored.instance.height,
                    "passed": False}
        return report.as_dict()

    @app.post("/projects/{pid}/rounds", status_code=202)
    async def start_round(pid: str, body: Optional[RoundBody] = None):
        cfg = (body or RoundBody()).to_config()
        state = store.start_round(pid, cfg)
        return {"token": state.token}

    @app.get("/projects/{pid}/rounds/{token}/status")
    async def round_status(pid: str, token: str):
        project, state = store.get_round(pid, token)
        with project.lock:
            return state.status_dict()

    @app.get("/projects/{pid}/rounds/{token}/history")
    async def round_history(pid: str, token: str):
        project, state = store.get_round(pid, token)
        with project.lock:
            return {
                "token": token,
                "records": list(state.records),
                "selected_epoch": state.selected_epoch,
            }

    @app.get("/projects/{pid}/instances/{iid}/comparison")
    async def comparison(pid: str, iid: str):
        return store.comparison(pid, iid)

    return app
