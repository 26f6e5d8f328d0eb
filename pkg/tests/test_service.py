"""Supervision service: annotation workflow, rounds, comparisons, persistence."""

import base64
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from miatt_forge import (
    GenParams,
    SceneParams,
    generate_miatts_abductive,
    generate_synthetic_scene,
)
from miatt_forge.core import OBJECT, UNKNOWN
from miatt_forge.formats import grid_to_pgm
from miatt_forge.service import create_app

FAST_ROUND = {
    "max_epochs": 400,
    "eval_every": 10,
    "patch_radius": 1,
    "hidden_width": 8,
    "seed": 5,
}


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "data")
    with TestClient(app) as c:
        yield c


def small_scene(seed=5):
    params = SceneParams(width=16, height=16, lane_half_width=2.5, lane_angle=0.25,
                         lane_offset=8, noise_sigma=0.02, seed=seed)
    return generate_synthetic_scene(params)


def cells_of(labeling) -> list:
    flat = labeling.flat()
    return [
        [int(i), "O" if flat[i] == OBJECT else "N"]
        for i in np.flatnonzero(flat != UNKNOWN)
    ]


def upload_scene(client, pid, seed=5, iid=None):
    instance, reference = small_scene(seed)
    url = f"/projects/{pid}/instances"
    if iid:
        url += f"?id={iid}"
    resp = client.post(url, content=grid_to_pgm(instance.pixels))
    assert resp.status_code == 201, resp.text
    return resp.json()["instance_id"], instance, reference


def annotate_with_generated_targets(client, pid, iid, reference, n=2, seed=5):
    miatts = generate_miatts_abductive(
        reference,
        GenParams(n_targets=n, target_collective_coverage=0.9, seed=seed),
    )
    report = None
    for k, target in enumerate(miatts):
        resp = client.post(
            f"/projects/{pid}/instances/{iid}/annotations",
            json={"contributor_id": f"contributor-{k}", "cells": cells_of(target)},
        )
        assert resp.status_code == 200, resp.text
        report = resp.json()
    return report


def wait_round(client, pid, token, timeout=60.0):
    deadline = time.time() + timeout
    last = None
    while time.time() < deadline:
        resp = client.get(f"/projects/{pid}/rounds/{token}/status")
        assert resp.status_code == 200
        last = resp.json()
        if last["status"] != "running":
            return last
        time.sleep(0.05)
    raise AssertionError(f"round did not finish: {last}")


class TestProjects:
    def test_create_and_fetch(self, client):
        resp = client.post("/projects", json={"id": "demo"})
        assert resp.status_code == 201
        assert resp.json()["id"] == "demo"
        assert client.get("/projects/demo").json()["round_status"] == "idle"

    def test_unknown_project_404_shape(self, client):
        resp = client.get("/projects/nope")
        assert resp.status_code == 404
        body = resp.json()
        assert body["code"] == "unknown_project" and "message" in body

    def test_duplicate_project_409(self, client):
        client.post("/projects", json={"id": "demo"})
        assert client.post("/projects", json={"id": "demo"}).status_code == 409


class TestAnnotations:
    def test_first_submission_reports_count_not_ok(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, reference = upload_scene(client, "p")
        resp = client.post(
            f"/projects/p/instances/{iid}/annotations",
            json={"contributor_id": "alice", "cells": [[0, "O"], [1, "O"]]},
        )
        assert resp.status_code == 200
        report = resp.json()
        assert report["count_ok"] is False and report["passed"] is False

    def test_second_consistent_submission_passes(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, reference = upload_scene(client, "p")
        report = annotate_with_generated_targets(client, "p", iid, reference)
        assert report["passed"] is True
        assert report["coverage"] >= 0.9

    def test_contradiction_reports_conflict_pixel(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, _ = upload_scene(client, "p")
        client.post(
            f"/projects/p/instances/{iid}/annotations",
            json={"contributor_id": "alice", "cells": [[0, "O"], [5, "N"]]},
        )
        resp = client.post(
            f"/projects/p/instances/{iid}/annotations",
            json={"contributor_id": "bob", "cells": [[0, "N"]]},
        )
        report = resp.json()
        assert report["passed"] is False
        assert report["conflicts"] == [[0, 0, 1]]

    def test_latest_wins_resolves_conflict(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, _ = upload_scene(client, "p")
        client.post(f"/projects/p/instances/{iid}/annotations",
                    json={"contributor_id": "alice", "cells": [[0, "O"], [5, "N"]]})
        client.post(f"/projects/p/instances/{iid}/annotations",
                    json={"contributor_id": "bob", "cells": [[0, "N"]]})
        resp = client.post(f"/projects/p/instances/{iid}/annotations",
                           json={"contributor_id": "bob", "cells": [[1, "O"], [6, "N"]]})
        report = resp.json()
        assert report["conflicts"] == [] and report["consistent"] is True

    def test_malformed_cells_422(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, _ = upload_scene(client, "p")
        url = f"/projects/p/instances/{iid}/annotations"
        out_of_range = client.post(url, json={"contributor_id": "a", "cells": [[9999, "O"]]})
        assert out_of_range.status_code == 422
        assert out_of_range.json()["code"] == "cell_out_of_range"
        dup = client.post(url, json={"contributor_id": "a", "cells": [[1, "O"], [1, "N"]]})
        assert dup.status_code == 422 and dup.json()["code"] == "duplicate_cell"
        bad_label = client.post(url, json={"contributor_id": "a", "cells": [[1, "X"]]})
        assert bad_label.status_code == 422
        full = client.post(url, json={
            "contributor_id": "a", "cells": [[i, "O"] for i in range(16 * 16)],
        })
        assert full.status_code == 422 and full.json()["code"] == "not_partial"

    def test_assessment_endpoint_matches_submission_response(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, reference = upload_scene(client, "p")
        report = annotate_with_generated_targets(client, "p", iid, reference)
        fetched = client.get(f"/projects/p/instances/{iid}/assessment").json()
        assert fetched == report

    def test_empty_submission_retracts_target(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, _ = upload_scene(client, "p")
        url = f"/projects/p/instances/{iid}/annotations"
        client.post(url, json={"contributor_id": "a", "cells": [[0, "O"]]})
        client.post(url, json={"contributor_id": "b", "cells": [[1, "N"]]})
        report = client.post(url, json={"contributor_id": "b", "cells": []}).json()
        assert report["count_ok"] is False  # only one target remains
        last = client.post(url, json={"contributor_id": "a", "cells": []})
        assert last.status_code == 409 and last.json()["code"] == "no_targets_left"


class TestRounds:
    def test_round_runs_to_stop_criteria(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, reference = upload_scene(client, "p")
        annotate_with_generated_targets(client, "p", iid, reference)
        resp = client.post("/projects/p/rounds", json=FAST_ROUND)
        assert resp.status_code == 202
        token = resp.json()["token"]
        status = wait_round(client, "p", token)
        assert status["status"] == "done"
        hist = client.get(f"/projects/p/rounds/{token}/history").json()
        last = hist["records"][-1]
        assert hist["selected_epoch"] == last["epoch"]
        assert last["metrics"]["LIoU"] > 0.999 and last["metrics"]["LErrors"] < 100

    def test_progress_is_monotonic(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, reference = upload_scene(client, "p")
        annotate_with_generated_targets(client, "p", iid, reference)
        token = client.post("/projects/p/rounds", json=FAST_ROUND).json()["token"]
        seen = []
        while True:
            status = client.get(f"/projects/p/rounds/{token}/status").json()
            seen.append(status["epoch"])
            if status["status"] != "running":
                break
            time.sleep(0.01)
        assert seen == sorted(seen)

    def test_conflicted_instance_blocks_round_with_412(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, _ = upload_scene(client, "p")
        client.post(f"/projects/p/instances/{iid}/annotations",
                    json={"contributor_id": "a", "cells": [[0, "O"]]})
        client.post(f"/projects/p/instances/{iid}/annotations",
                    json={"contributor_id": "b", "cells": [[0, "N"]]})
        resp = client.post("/projects/p/rounds", json=FAST_ROUND)
        assert resp.status_code == 412
        body = resp.json()
        assert body["code"] == "assessment_failed"
        assert body["details"]["failing"][0]["instance"] == iid

    def test_concurrent_starts_yield_one_202(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, reference = upload_scene(client, "p")
        annotate_with_generated_targets(client, "p", iid, reference)
        codes = []
        lock = threading.Lock()

        def start():
            resp = client.post("/projects/p/rounds", json=FAST_ROUND)
            with lock:
                codes.append(resp.status_code)

        threads = [threading.Thread(target=start) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(codes) == [202, 409, 409, 409]
        token = client.get("/projects/p").json()["rounds"][0]["token"]
        wait_round(client, "p", token)


class TestComparison:
    def test_comparison_before_any_round_409(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, reference = upload_scene(client, "p")
        annotate_with_generated_targets(client, "p", iid, reference)
        resp = client.get(f"/projects/p/instances/{iid}/comparison")
        assert resp.status_code == 409 and resp.json()["code"] == "no_model"

    def test_agreement_counts_equal_confusion_counts(self, client):
        client.post("/projects", json={"id": "p"})
        iid, _, reference = upload_scene(client, "p")
        annotate_with_generated_targets(client, "p", iid, reference)
        token = client.post("/projects/p/rounds", json=FAST_ROUND).json()["token"]
        wait_round(client, "p", token)
        payload = client.get(f"/projects/p/instances/{iid}/comparison").json()
        ag, counts = payload["agreement_counts"], payload["counts"]
        assert ag["agree_object"] == counts["ltp"]
        assert ag["agree_nonobject"] == counts["ltn"]
        assert ag["false_positive"] == counts["lfp"]
        assert ag["false_negative"] == counts["lfn"]
        assert ag["undetermined"] == counts["undetermined"]
        # byte payloads decode to the advertised shape
        classes = np.frombuffer(base64.b64decode(payload["agreement"]), dtype=np.uint8)
        assert classes.size == payload["width"] * payload["height"]
        assert int((classes == 1).sum()) == counts["ltp"]
        assert len(payload["targets"]) == 2


class TestPersistence:
    def test_replay_rebuilds_state(self, tmp_path):
        data_dir = tmp_path / "data"
        app = create_app(data_dir)
        with TestClient(app) as client:
            client.post("/projects", json={"id": "p"})
            iid, _, reference = upload_scene(client, "p")
            annotate_with_generated_targets(client, "p", iid, reference)
            token = client.post("/projects/p/rounds", json=FAST_ROUND).json()["token"]
            wait_round(client, "p", token)
            before = client.get("/projects/p").json()
            history = client.get(f"/projects/p/rounds/{token}/history").json()
            comparison = client.get(f"/projects/p/instances/{iid}/comparison").json()

        with TestClient(create_app(data_dir)) as reborn:
            after = reborn.get("/projects/p").json()
            assert after == before
            assert reborn.get(f"/projects/p/rounds/{token}/history").json() == history
            assert reborn.get(f"/projects/p/instances/{iid}/comparison").json() == comparison

    def test_interrupted_round_marked_failed(self, tmp_path):
        import json as json_mod

        data_dir = tmp_path / "data"
        data_dir.mkdir()
        events = [
            {"event": "project_created", "project": "p"},
            {"event": "round_started", "project": "p", "token": "round-1",
             "config": {"alpha": None, "learning_rate": 0.1, "momentum": 0.9,
                        "max_epochs": 10, "eval_every": 5, "stop_liou_min": 0.999,
                        "stop_lerrors_max": 100, "prob_clamp_epsilon": 1e-07,
                        "patch_radius": 1, "hidden_width": 8, "seed": 0}},
        ]
        (data_dir / "p.jsonl").write_text(
            "".join(json_mod.dumps(e) + "\n" for e in events)
        )
        with TestClient(create_app(data_dir)) as client:
            status = client.get("/projects/p/rounds/round-1/status").json()
            assert status["status"] == "failed"
            assert "restart" in status["error"]
