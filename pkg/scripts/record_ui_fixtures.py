#!/usr/bin/env python3
"""Record annotation-service request/response exchanges for the frontend's
stub tests.

Drives the live FastAPI app through the coder workflow (session, labels
with one disagreement, adjudication, consistency, a converging refine
round, plus a degenerate-split 422 on a second run) and writes every
exchange, in order, to frontend/tests/fixtures/recorded.json. The
frontend replays the same scenario against a fetch stub fed from this
file, so the stub cannot drift from the real wire format.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from crisisimg.cluster import ClusterModel
from crisisimg.embedding import EmbeddingMatrix
from crisisimg.refine import RefineConfig, RefineState
from crisisimg.service import create_app, register_run

TOKEN = "rec-token"
OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def blob_run(n_per_cluster, sample_size, seed, prefix):
    rng = np.random.default_rng(seed)
    ids, rows, assign = [], [], {}
    for j, center in enumerate((0.0, 25.0)):
        for t in range(n_per_cluster):
            image_id = f"{prefix}{j}_{t:02d}"
            ids.append(image_id)
            rows.append(np.full(4, center) + rng.normal(scale=0.05, size=4))
            assign[image_id] = j
    matrix = EmbeddingMatrix(ids, np.asarray(rows, dtype=np.float32))
    model = ClusterModel(
        assignments=assign,
        centroids={0: np.zeros(4), 1: np.full(4, 25.0)},
        inertia=0.0,
        silhouette=None,
        seed=0,
    )
    state = RefineState(
        config=RefineConfig(sample_size=sample_size, seed=7), model=model
    )
    return matrix, state


class Recorder:
    def __init__(self, client: TestClient):
        self.client = client
        self.exchanges: list[dict] = []

    def call(self, method: str, path: str, body=None):
        headers = {"Authorization": f"Bearer {TOKEN}"}
        response = self.client.request(method, path, headers=headers, json=body)
        content_type = response.headers.get("content-type", "")
        payload = response.json() if "json" in content_type else None
        self.exchanges.append(
            {
                "method": method,
                "path": path,
                "request_body": body,
                "status": response.status_code,
                "response_body": payload,
            }
        )
        return response


def main() -> None:
    app = create_app(token=TOKEN)
    matrix_a, state_a = blob_run(n_per_cluster=12, sample_size=12, seed=1, prefix="a")
    matrix_b, state_b = blob_run(n_per_cluster=20, sample_size=20, seed=2, prefix="b")
    register_run(app, "rec", state_a, matrix_a)
    register_run(app, "degen", state_b, matrix_b)
    rec = Recorder(TestClient(app))

    # --- happy path: label, disagree once, adjudicate, converge ---------
    rec.call("GET", "/runs/rec")
    session = rec.call("POST", "/runs/rec/sessions").json()
    sid = session["session_id"]
    disputed = session["samples"]["0"][2]
    for cluster, ids in sorted(session["samples"].items()):
        theme = "Food" if cluster == "0" else "Posters"
        for image_id in ids:
            rec.call(
                "POST", f"/sessions/{sid}/labels",
                {"coder_id": "alice", "image_id": image_id, "theme": theme},
            )
            bob_theme = "People" if image_id == disputed else theme
            rec.call(
                "POST", f"/sessions/{sid}/labels",
                {"coder_id": "bob", "image_id": image_id, "theme": bob_theme},
            )
    rec.call("GET", f"/sessions/{sid}/adjudications")
    rec.call("GET", f"/sessions/{sid}/consistency")
    rec.call(
        "POST", f"/sessions/{sid}/adjudications",
        {"image_id": disputed, "theme": "Food"},
    )
    rec.call("GET", f"/sessions/{sid}/consistency")
    rec.call("POST", "/runs/rec/refine")
    rec.call("GET", "/runs/rec")

    # --- degenerate split: 422 with options, then forced resolution -----
    session_b = rec.call("POST", "/runs/degen/sessions").json()
    sid_b = session_b["session_id"]
    for cluster, ids in sorted(session_b["samples"].items()):
        for pos, image_id in enumerate(ids):
            if cluster == "0":
                # prevalences 0.55 / 0.15 / 0.15 / 0.15: one significant theme
                theme = "A" if pos < 11 else ["B", "C", "D"][pos % 3]
            else:
                theme = "Posters"
            for coder in ("alice", "bob"):
                rec.call(
                    "POST", f"/sessions/{sid_b}/labels",
                    {"coder_id": coder, "image_id": image_id, "theme": theme},
                )
    rec.call("POST", "/runs/degen/refine")  # 422 degenerate_split
    rec.call("POST", "/runs/degen/refine", {"on_degenerate": "force_split_2"})

    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "recorded.json").write_text(
        json.dumps({"token": TOKEN, "exchanges": rec.exchanges}, indent=2) + "\n",
        encoding="utf-8",
    )
    print(f"recorded {len(rec.exchanges)} exchanges -> {OUT / 'recorded.json'}")


if __name__ == "__main__":
    main()
