"""HTTP API exposing refinement runs to human coders.

Serves per-cluster samples and thumbnails, accepts labels from exactly
two coders (agreement auto-adjudicates, disagreement queues an explicit
adjudication), reports live consistency and inter-coder kappa, and
executes split/merge rounds. State above the run checkpoint is derived,
so a restart that reloads checkpoints reproduces every GET response.

All endpoints expect ``Authorization: Bearer <token>`` when the service
was created with a non-empty token (a deployment-local shared secret).
Originals are never served; thumbnails are JPEG re-encodes capped at
256px on the long edge.
"""

from __future__ import annotations

import io
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Depends, FastAPI, Header, HTTPException, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import refine as refine_mod
from .cluster import load_model
from .embedding import EmbeddingMatrix, load_embeddings
from .errors import DegenerateSplitError, NeedsLabelsError
from .refine import RefineConfig, RefineState
from .stats import cohens_kappa

THUMBNAIL_EDGE = 256


class LabelIn(BaseModel):
    coder_id: str
    image_id: str
    theme: str


class AdjudicationIn(BaseModel):
    image_id: str
    theme: str


class RefineIn(BaseModel):
    on_degenerate: str | None = None


@dataclass
class RunHandle:
    run_id: str
    state: RefineState
    matrix: EmbeddingMatrix
    images: dict[str, Path] = field(default_factory=dict)
    checkpoint_path: Path | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def persist(self) -> None:
        if self.checkpoint_path is not None:
            self.checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
            self.state.save(self.checkpoint_path)

    def session_id(self) -> str:
        return f"{self.run_id}-r{self.state.round_index}"


class Registry:
    def __init__(self) -> None:
        self.runs: dict[str, RunHandle] = {}

    def add(self, handle: RunHandle) -> None:
        self.runs[handle.run_id] = handle

    def run(self, run_id: str) -> RunHandle:
        handle = self.runs.get(run_id)
        if handle is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        return handle

    def session(self, session_id: str) -> RunHandle:
        run_id, _, round_part = session_id.rpartition("-r")
        handle = self.runs.get(run_id)
        if (
            handle is None
            or not round_part.isdigit()
            or int(round_part) != handle.state.round_index
            or not handle.state.session_open
        ):
            raise HTTPException(
                status_code=404, detail=f"unknown session {session_id!r}"
            )
        return handle


def _session_doc(handle: RunHandle) -> dict:
    state = handle.state
    samples = state.samples()
    adjudicated = state.store.adjudicated_labels(state.round_index)
    if state.ready():
        status = "ready"
    else:
        pending = {p["image_id"] for p in state.store.pending(state.round_index)}
        unresolved = [
            i
            for ids in samples.values()
            for i in ids
            if i not in adjudicated and i not in pending
        ]
        status = "labeling" if unresolved else "awaiting-adjudication"
    return {
        "session_id": handle.session_id(),
        "run_id": handle.run_id,
        "round": state.round_index,
        "samples": {str(j): ids for j, ids in sorted(samples.items())},
        "status": status,
        "suggested_themes": list(refine_mod.SUGGESTED_THEMES),
        "n_sampled": sum(len(ids) for ids in samples.values()),
        "n_adjudicated": sum(
            1 for ids in samples.values() for i in ids if i in adjudicated
        ),
    }


def _run_doc(handle: RunHandle) -> dict:
    state = handle.state
    return {
        "run_id": handle.run_id,
        "status": state.status,
        "round": state.round_index,
        "session_open": state.session_open,
        "clusters": {str(j): n for j, n in state.model.sizes().items()},
        "themes": (
            None
            if state.model.themes is None
            else {str(j): t for j, t in sorted(state.model.themes.items())}
        ),
        "rounds_completed": len(state.history),
        "average_consistency": (
            state.history[-1].average_consistency if state.history else None
        ),
    }


def create_app(
    *,
    token: str = "",
    runs_dir: str | None = None,
    images_root: str | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    """Build the service app.

    ``runs_dir`` holds one pipeline run directory per run to expose; runs
    are also registered programmatically via ``register_run``. With
    ``static_dir`` set, the coder console SPA is served at /ui.
    """
    app = FastAPI(title="crisisimg annotation service")
    registry = Registry()
    app.state.registry = registry

    if runs_dir is not None:
        for child in sorted(Path(runs_dir).iterdir()):
            if (child / "cluster" / "model.json").exists():
                register_run_dir(app, child, images_root=images_root)

    def auth(authorization: str | None = Header(default=None)) -> None:
        if token and authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad bearer token")

    @app.post("/runs/{run_id}/sessions", status_code=201, dependencies=[Depends(auth)])
    def create_session(run_id: str):
        handle = registry.run(run_id)
        with handle.lock:
            state = handle.state
            if state.status != "labeling":
                raise HTTPException(
                    status_code=409, detail=f"run is {state.status}, not labeling"
                )
            if state.session_open:
                raise HTTPException(
                    status_code=409,
                    detail=f"round {state.round_index} already has a session",
                )
            state.session_open = True
            handle.persist()
            return _session_doc(handle)

    @app.get("/runs/{run_id}", dependencies=[Depends(auth)])
    def run_info(run_id: str):
        return _run_doc(registry.run(run_id))

    @app.get("/sessions/{session_id}", dependencies=[Depends(auth)])
    def session_info(session_id: str):
        return _session_doc(registry.session(session_id))

    @app.post(
        "/sessions/{session_id}/labels", status_code=204, dependencies=[Depends(auth)]
    )
    def submit_label(session_id: str, body: LabelIn):
        handle = registry.session(session_id)
        with handle.lock:
            state = handle.state
            if not body.theme.strip():
                raise HTTPException(status_code=422, detail="theme must be non-empty")
            if body.image_id not in state.sampled_images():
                raise HTTPException(
                    status_code=404,
                    detail=f"image {body.image_id!r} is not in this session's sample",
                )
            try:
                state.store.add_label(
                    state.round_index, body.image_id, body.coder_id, body.theme
                )
            except PermissionError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            handle.persist()
        return Response(status_code=204)

    @app.get("/sessions/{session_id}/adjudications", dependencies=[Depends(auth)])
    def adjudications(session_id: str):
        handle = registry.session(session_id)
        state = handle.state
        return {"pending": state.store.pending(state.round_index)}

    @app.post(
        "/sessions/{session_id}/adjudications",
        status_code=204,
        dependencies=[Depends(auth)],
    )
    def adjudicate(session_id: str, body: AdjudicationIn):
        handle = registry.session(session_id)
        with handle.lock:
            state = handle.state
            if not body.theme.strip():
                raise HTTPException(status_code=422, detail="theme must be non-empty")
            try:
                state.store.adjudicate(state.round_index, body.image_id, body.theme)
            except PermissionError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            except KeyError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
            handle.persist()
        return Response(status_code=204)

    @app.get("/sessions/{session_id}/consistency", dependencies=[Depends(auth)])
    def consistency(session_id: str):
        handle = registry.session(session_id)
        state = handle.state
        reports = state.reports()
        coder_a, coder_b = state.store.double_labeled(state.round_index)
        kappa = None
        if coder_a:
            try:
                kappa = cohens_kappa(coder_a, coder_b).kappa
            except ValueError:
                kappa = None  # degenerate agreement pattern; undefined marker
        return {
            "reports": [r.to_dict() for _, r in sorted(reports.items())],
            "kappa": kappa,
            "n_double_labeled": len(coder_a),
            "ready": state.ready(),
        }

    @app.post("/runs/{run_id}/refine", dependencies=[Depends(auth)])
    def refine_round(run_id: str, body: RefineIn | None = None):
        handle = registry.run(run_id)
        with handle.lock:
            state = handle.state
            if state.status != "labeling" or not state.session_open:
                raise HTTPException(
                    status_code=409,
                    detail=f"run is {state.status}; open a session and label first",
                )
            on_degenerate = body.on_degenerate if body else None
            try:
                round_rec = state.execute_round(
                    handle.matrix, on_degenerate=on_degenerate
                )
            except NeedsLabelsError as exc:
                handle.persist()  # enlarge_sample mutates sample overrides
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            except DegenerateSplitError as exc:
                return JSONResponse(
                    status_code=422,
                    content={
                        "code": "degenerate_split",
                        "cluster": exc.cluster_index,
                        "significant_themes": exc.significant_themes,
                        "options": list(DegenerateSplitError.OPTIONS),
                    },
                )
            state.session_open = False
            handle.persist()
            return {
                "round": round_rec.round_index,
                "status": state.status,
                "average_consistency": round_rec.average_consistency,
                "actions": [a.to_dict() for a in round_rec.actions],
                "clusters": {str(j): n for j, n in state.model.sizes().items()},
                "themes": (
                    None
                    if state.model.themes is None
                    else {str(j): t for j, t in sorted(state.model.themes.items())}
                ),
            }

    @app.get(
        "/runs/{run_id}/images/{image_id}/thumbnail", dependencies=[Depends(auth)]
    )
    def thumbnail(run_id: str, image_id: str):
        handle = registry.run(run_id)
        path = handle.images.get(image_id)
        if path is None or not Path(path).exists():
            raise HTTPException(status_code=404, detail=f"no image {image_id!r}")
        from PIL import Image

        with Image.open(path) as img:
            rgb = img.convert("RGB")
            rgb.thumbnail((THUMBNAIL_EDGE, THUMBNAIL_EDGE))
            buf = io.BytesIO()
            rgb.save(buf, format="JPEG", quality=85)
        return Response(content=buf.getvalue(), media_type="image/jpeg")

    if static_dir is not None and Path(static_dir).exists():
        app.mount("/ui", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def register_run(
    app: FastAPI,
    run_id: str,
    state: RefineState,
    matrix: EmbeddingMatrix,
    *,
    images: dict[str, Path] | None = None,
    checkpoint_path: Path | None = None,
) -> RunHandle:
    handle = RunHandle(
        run_id=run_id,
        state=state,
        matrix=matrix,
        images=images or {},
        checkpoint_path=checkpoint_path,
    )
    app.state.registry.add(handle)
    return handle


def register_run_dir(
    app: FastAPI, run_dir: Path, *, images_root: str | None = None
) -> RunHandle:
    """Expose a pipeline run directory: resume its checkpoint if present,
    else start a fresh labeling run from the cluster stage's model."""
    run_dir = Path(run_dir)
    checkpoint = run_dir / "refine" / "checkpoint.json"
    matrix = load_embeddings(run_dir / "embeddings.cemb")
    if checkpoint.exists():
        state = RefineState.load(checkpoint)
    else:
        model = load_model(
            run_dir / "cluster" / "model.json",
            run_dir / "cluster" / "centroids.cemb",
        )
        config = RefineConfig()
        manifest_path = run_dir / "manifest.json"
        if manifest_path.exists():
            doc = json.loads(manifest_path.read_text(encoding="utf-8"))
            section = doc.get("config", {}).get("refine", {})
            run_section = doc.get("config", {}).get("run", {})
            config = RefineConfig(
                sample_size=int(section.get("sample_size", 50)),
                dominance_threshold=float(section.get("dominance_threshold", 0.60)),
                significance_threshold=float(
                    section.get("significance_threshold", 0.20)
                ),
                max_rounds=int(section.get("max_rounds", 4)),
                seed=int(run_section.get("seed", 0)),
            )
        state = RefineState(config=config, model=model, matrix_path="embeddings.cemb")

    images: dict[str, Path] = {}
    posts_path = run_dir / "corpus" / "posts.jsonl"
    if posts_path.exists():
        root = Path(images_root) if images_root else run_dir
        with open(posts_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                post = json.loads(line)
                for img in post.get("images", []):
                    source = Path(img["source"])
                    images[img["image_id"]] = (
                        source if source.is_absolute() else root / source
                    )
    return register_run(
        app, run_dir.name, state, matrix,
        images=images, checkpoint_path=checkpoint,
    )
