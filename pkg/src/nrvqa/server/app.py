"""FastAPI wiring for the rating service.

Endpoints:
  POST /sessions                     create a rating session
  GET  /sessions/{id}                session progress (for resuming clients)
  GET  /sessions/{id}/next           current item + single-use media URL
  POST /sessions/{id}/ratings        submit the rating for the current item
  GET  /studies/{id}/export.csv      ratings CSV of completed sessions
  GET  /media/{token}                byte-range media serving

An optional static frontend directory can be mounted at the root.
"""

from __future__ import annotations

import re
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .store import MediaLibrary, RatingStoreError, StudyStore


class CreateSessionRequest(BaseModel):
    study_id: str
    subject_id: str
    videos: list[str]
    seed: int = 0


class SessionCreated(BaseModel):
    session_id: str
    study_id: str
    subject_id: str
    item_count: int


class SessionStatus(BaseModel):
    session_id: str
    study_id: str
    subject_id: str
    total: int
    rated: int
    done: bool


class NextItemResponse(BaseModel):
    done: bool
    total: int
    rated: int
    index: int | None = None
    video_id: str | None = None
    media_url: str | None = None


class RatingSubmission(BaseModel):
    video_id: str
    rating: float = Field(description="1..5, snapped to 0.1 server-side")


class RatingAck(BaseModel):
    video_id: str
    rating: float
    index: int
    remaining: int
    done: bool


_RANGE_RE = re.compile(r"bytes=(\d*)-(\d*)")


def create_app(data_dir: str | Path, media_dir: str | Path,
               ui_dir: str | Path | None = None) -> FastAPI:
    media = MediaLibrary.load(media_dir)
    store = StudyStore(data_dir, media)
    app = FastAPI(title="nrvqa rating service")
    app.state.store = store

    @app.exception_handler(RatingStoreError)
    async def _store_error(request: Request, exc: RatingStoreError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": str(exc)},
        )

    @app.post("/sessions", response_model=SessionCreated)
    def create_session(body: CreateSessionRequest) -> SessionCreated:
        session = store.create_session(
            body.study_id, body.subject_id, body.videos, body.seed
        )
        return SessionCreated(
            session_id=session.session_id,
            study_id=session.study_id,
            subject_id=session.subject_id,
            item_count=len(session.items),
        )

    @app.get("/sessions/{session_id}", response_model=SessionStatus)
    def session_status(session_id: str) -> SessionStatus:
        session = store.get_session(session_id)
        return SessionStatus(
            session_id=session.session_id,
            study_id=session.study_id,
            subject_id=session.subject_id,
            total=len(session.items),
            rated=session.rated_count,
            done=session.complete,
        )

    @app.get("/sessions/{session_id}/next", response_model=NextItemResponse)
    def next_item(session_id: str) -> NextItemResponse:
        session, item = store.next_item(session_id)
        if item is None:
            return NextItemResponse(
                done=True, total=len(session.items), rated=session.rated_count
            )
        return NextItemResponse(
            done=False,
            total=len(session.items),
            rated=session.rated_count,
            index=session.cursor,
            video_id=item.video_id,
            media_url=f"/media/{item.token}",
        )

    @app.post("/sessions/{session_id}/ratings", response_model=RatingAck)
    def submit_rating(session_id: str, body: RatingSubmission) -> RatingAck:
        session, value, index = store.submit_rating(
            session_id, body.video_id, body.rating
        )
        return RatingAck(
            video_id=body.video_id,
            rating=value,
            index=index,
            remaining=len(session.items) - session.rated_count,
            done=session.complete,
        )

    @app.get("/studies/{study_id}/export.csv")
    def export_csv(study_id: str) -> PlainTextResponse:
        csv_text = store.export_csv(study_id)
        return PlainTextResponse(csv_text, media_type="text/csv")

    @app.get("/media/{token}")
    def media_bytes(token: str, request: Request) -> Response:
        path = store.resolve_media(token)
        data = path.read_bytes()
        range_header = request.headers.get("range")
        if range_header:
            m = _RANGE_RE.fullmatch(range_header.strip())
            if not m:
                return Response(status_code=416)
            start = int(m.group(1)) if m.group(1) else 0
            end = int(m.group(2)) if m.group(2) else len(data) - 1
            if start >= len(data) or start > end:
                return Response(status_code=416)
            end = min(end, len(data) - 1)
            chunk = data[start:end + 1]
            return Response(
                content=chunk,
                status_code=206,
                media_type="application/octet-stream",
                headers={
                    "Content-Range": f"bytes {start}-{end}/{len(data)}",
                    "Accept-Ranges": "bytes",
                },
            )
        return Response(
            content=data,
            media_type="application/octet-stream",
            headers={"Accept-Ranges": "bytes"},
        )

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
