"""HTTP API for candidate review, plus static serving of the browser UI.

Endpoints (JSON bodies):
  GET  /api/tasks/next?kind=&annotator=   next unannotated candidate set
  GET  /api/candidates/{id}               one candidate set
  POST /api/annotations                   {candidate_set_id, decision, annotator}
  GET  /api/progress                      per-kind {total, annotated, rejected}

The UI is a separately built static bundle; when its directory is absent the
API still serves, so the Python suite never depends on a frontend build.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .curate import REJECT_ALL, AnnotationRecord, AnnotationStore, candidate_set_to_json
from .errors import CurationError
from .perturb import PerturbationKind


class AnnotationBody(BaseModel):
    candidate_set_id: str
    decision: int | str
    annotator: str


def create_app(store: AnnotationStore, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="candidate review service")

    @app.get("/api/tasks/next")
    def next_task(kind: str | None = None, annotator: str | None = None):
        kind_filter = None
        if kind:
            try:
                kind_filter = PerturbationKind(kind)
            except ValueError:
                raise HTTPException(status_code=422, detail=f"unknown kind {kind!r}")
        cs = store.next_unannotated(kind_filter)
        if cs is None:
            raise HTTPException(status_code=404, detail="no unannotated tasks remain")
        return candidate_set_to_json(cs)

    @app.get("/api/candidates/{candidate_set_id}")
    def get_candidates(candidate_set_id: str):
        cs = store.sets.get(candidate_set_id)
        if cs is None:
            raise HTTPException(status_code=404, detail="unknown candidate set")
        return candidate_set_to_json(cs)

    @app.post("/api/annotations", status_code=201)
    def post_annotation(body: AnnotationBody):
        if isinstance(body.decision, str) and body.decision != REJECT_ALL:
            raise HTTPException(
                status_code=422, detail=f"decision must be an index or {REJECT_ALL!r}"
            )
        record = AnnotationRecord.now(body.candidate_set_id, body.decision, body.annotator)
        try:
            store.record_annotation(record)
        except CurationError as exc:
            status = 404 if "unknown candidate set" in str(exc) else 422
            raise HTTPException(status_code=status, detail=str(exc))
        return {"stored": True, "candidate_set_id": body.candidate_set_id}

    @app.get("/api/progress")
    def progress():
        return store.progress()

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
