"""HTTP API for running blinded ranking studies.

Rater-facing responses never contain true image-type names; unblinding
happens only in the export endpoint.
"""

from __future__ import annotations

import io
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, PlainTextResponse, Response
from pydantic import BaseModel

from .study import ConflictError, SurveyError, SurveyStore, create_study


class CreateStudyRequest(BaseModel):
    manifest_path: str
    n_queries: int
    criteria: list[str]
    seed: int = 0
    study_id: str | None = None


class RankingSubmission(BaseModel):
    query_id: str
    criterion_index: int
    ranks: dict[str, int]


def create_app(store_path, images_root, frontend_dir=None) -> FastAPI:
    store = SurveyStore(store_path)
    images_root = Path(images_root)
    app = FastAPI(title="synth7t rater study")
    app.state.store = store

    def image_url(rel):
        return f"/images/{rel}"

    @app.get("/studies")
    def list_studies():
        return [
            {"study_id": s.study_id, "n_queries": len(s.queries),
             "criteria": s.criteria, "k": s.k}
            for s in store.studies.values()
        ]

    @app.post("/studies")
    def post_study(req: CreateStudyRequest):
        try:
            study = create_study(req.manifest_path, req.n_queries, req.criteria,
                                 req.seed, images_root, study_id=req.study_id)
            store.add_study(study)
        except SurveyError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"study_id": study.study_id, "n_queries": len(study.queries),
                "criteria": study.criteria, "k": study.k}

    @app.get("/studies/{study_id}")
    def get_study(study_id: str):
        try:
            study = store.get_study(study_id)
        except SurveyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"study_id": study.study_id, "criteria": study.criteria, "k": study.k,
                "n_queries": len(study.queries)}

    @app.get("/studies/{study_id}/raters/{rater_id}/next")
    def next_query(study_id: str, rater_id: str):
        try:
            study = store.get_study(study_id)
        except SurveyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        done, total = store.progress(study_id, rater_id)
        task = store.next_task(study_id, rater_id)
        if task is None:
            return {"done": True, "completed": done, "total": total}
        query, ci = task
        payload = study.public_query(query, image_url)
        payload.update({"done": False, "criterion_index": ci,
                        "criterion": study.criteria[ci],
                        "completed": done, "total": total})
        return payload

    @app.post("/studies/{study_id}/raters/{rater_id}/rankings")
    def submit(study_id: str, rater_id: str, body: RankingSubmission):
        try:
            ack = store.submit_ranking(study_id, rater_id, body.query_id,
                                       body.criterion_index, body.ranks)
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except SurveyError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return ack

    @app.get("/studies/{study_id}/export.csv")
    def export(study_id: str, include_incomplete: bool = False):
        try:
            table = store.export_ranks(study_id, include_incomplete=include_incomplete)
        except SurveyError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        buf = io.StringIO()
        table.to_csv(buf, index=False)
        return PlainTextResponse(buf.getvalue(), media_type="text/csv")

    @app.get("/images/{path:path}")
    def image(path: str):
        full = (images_root / path).resolve()
        if images_root.resolve() not in full.parents or not full.exists():
            raise HTTPException(status_code=404, detail="no such image")
        return FileResponse(full, media_type="image/png")

    if frontend_dir is not None:
        frontend = Path(frontend_dir)

        @app.get("/")
        def index():
            page = frontend / "index.html"
            if not page.exists():
                raise HTTPException(status_code=404, detail="frontend not built")
            return Response(page.read_text(), media_type="text/html")

        @app.get("/app.js")
        def app_js():
            bundle = frontend / "app.js"
            if not bundle.exists():
                raise HTTPException(status_code=404, detail="frontend not built")
            return Response(bundle.read_text(), media_type="text/javascript")

    return app
