"""HTTP collection service for pairwise preference sessions.

Each session walks one worker through one HIT batch in order.  The
4-second lockout is enforced server-side from the serve timestamp of each
task, so a misbehaving client cannot rush; answers arriving early get a
retry signal and the task is served again.  After the 30th answer the
control questions decide whether the whole HIT is accepted.  All state is
persisted on every change: responses append to a CSV log, demographics to
a second CSV, sessions to a JSON snapshot, so a restart loses nothing.
"""
from __future__ import annotations

import base64
import csv
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Mapping

from fastapi import FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse

from .dataset import (DEMOGRAPHICS_COLUMNS, HIT_SIZE, RESPONSE_COLUMNS, HitBatch,
                      PairSample, Response, validate_hit)
from .voxel import VoxelGrid, grid_to_bytes

LOCKOUT_MS = 4000

STATE_ACTIVE = "active"
STATE_COMPLETED = "completed"
STATE_REJECTED = "rejected"


class ServerError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class Session:
    session_id: str
    worker_id: str
    batch: HitBatch
    cursor: int = 0  # next task index to be answered
    served_at_ms: list[int] = field(default_factory=list)
    responses: list[Response] = field(default_factory=list)
    state: str = STATE_ACTIVE


class CollectionState:
    """All mutable server state behind one lock.

    A single lock serializes every transition, which both keeps each
    session's task order strict and gives the response log a total order.
    """

    def __init__(self, batches: list[HitBatch], key: Mapping[str, str],
                 grids: Mapping[str, VoxelGrid], persist_dir: str | None = None,
                 clock: Callable[[], float] = time.time):
        self._lock = threading.Lock()
        self._batches = list(batches)
        self._key = dict(key)
        self._grids = dict(grids)
        self._clock = clock
        self._next_batch = 0
        self.sessions: dict[str, Session] = {}
        self._demographics: dict[str, dict[str, str]] = {}
        self._persist_dir = persist_dir
        if persist_dir:
            os.makedirs(persist_dir, exist_ok=True)
            self._restore()

    # -- helpers ----------------------------------------------------------

    def _now_ms(self) -> int:
        return int(self._clock() * 1000)

    def _task_payload(self, session: Session) -> dict:
        task = session.batch.tasks[session.cursor]
        return {
            "pair_id": task.pair_id,
            "index": session.cursor + 1,
            "total": HIT_SIZE,
            "lockout_ms": LOCKOUT_MS,
            "shape_a": self._shape_payload(task.shape_a),
            "shape_b": self._shape_payload(task.shape_b),
        }

    def _shape_payload(self, shape_id: str) -> dict:
        grid = self._grids.get(shape_id)
        if grid is None:
            raise ServerError(500, f"shape {shape_id!r} has no voxel payload")
        return {"shape_id": shape_id,
                "srvox_b64": base64.b64encode(grid_to_bytes(grid)).decode("ascii")}

    # -- operations -------------------------------------------------------

    def start_session(self, worker_id: str,
                      demographics: Mapping[str, str] | None = None) -> dict:
        with self._lock:
            if self._next_batch >= len(self._batches):
                raise ServerError(409, "no HIT batches remaining")
            batch = self._batches[self._next_batch]
            self._next_batch += 1
            session = Session(session_id=uuid.uuid4().hex[:12], worker_id=worker_id,
                              batch=batch)
            session.served_at_ms.append(self._now_ms())
            self.sessions[session.session_id] = session
            if demographics:
                clean = {k: str(demographics[k]) for k in ("gender", "age_group", "region")
                         if demographics.get(k)}
                if clean:
                    self._demographics[worker_id] = clean
                    self._append_demographics(worker_id, clean)
            self._persist_sessions()
            return {"session_id": session.session_id, "task": self._task_payload(session)}

    def submit_response(self, session_id: str, pair_id: str, choice: str) -> dict:
        with self._lock:
            session = self.sessions.get(session_id)
            if session is None:
                raise ServerError(404, f"unknown session {session_id!r}")
            if session.state != STATE_ACTIVE:
                raise ServerError(409, f"session is {session.state}")
            task = session.batch.tasks[session.cursor]
            if pair_id != task.pair_id:
                raise ServerError(409, f"expected answer for pair {task.pair_id!r}, "
                                       f"got {pair_id!r}")
            if choice not in ("A", "B"):
                raise ServerError(400, f"choice must be 'A' or 'B', got {choice!r}")

            elapsed = self._now_ms() - session.served_at_ms[session.cursor]
            if elapsed < LOCKOUT_MS:
                return {"status": "retry", "retry_after_ms": LOCKOUT_MS - elapsed,
                        "task": self._task_payload(session)}

            response = Response(pair_id=task.pair_id, worker_id=session.worker_id,
                                choice=choice, elapsed_ms=elapsed,
                                timestamp_ms=self._now_ms(), hit_id=session.batch.hit_id,
                                shape_a=task.shape_a, shape_b=task.shape_b,
                                is_control=task.is_control)
            session.responses.append(response)
            self._append_log(response)
            session.cursor += 1

            if session.cursor >= HIT_SIZE:
                accepted = validate_hit(session.batch, session.responses, self._key)
                session.state = STATE_COMPLETED if accepted else STATE_REJECTED
                self._persist_sessions()
                return {"status": session.state, "progress": session.cursor}

            session.served_at_ms.append(self._now_ms())
            self._persist_sessions()
            return {"status": "next", "task": self._task_payload(session)}

    def status(self, session_id: str) -> dict:
        with self._lock:
            session = self.sessions.get(session_id)
            if session is None:
                raise ServerError(404, f"unknown session {session_id!r}")
            return {"state": session.state,
                    "progress": session.cursor, "total": HIT_SIZE}

    def export_rows(self, accepted_only: bool) -> list[Response]:
        with self._lock:
            rows = []
            for session in self.sessions.values():
                if accepted_only and session.state != STATE_COMPLETED:
                    continue
                rows.extend(session.responses)
            rows.sort(key=lambda r: (r.timestamp_ms, r.hit_id, r.pair_id))
            return rows

    def shape(self, shape_id: str) -> dict:
        with self._lock:
            if shape_id not in self._grids:
                raise ServerError(404, f"unknown shape {shape_id!r}")
            return self._shape_payload(shape_id)

    # -- persistence ------------------------------------------------------

    def _log_path(self) -> str:
        return os.path.join(self._persist_dir, "responses.csv")

    def _append_log(self, r: Response) -> None:
        if not self._persist_dir:
            return
        path = self._log_path()
        fresh = not os.path.exists(path)
        with open(path, "a", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(RESPONSE_COLUMNS)
            writer.writerow([r.hit_id, r.pair_id, r.shape_a, r.shape_b,
                             int(r.is_control), r.worker_id, r.choice,
                             r.elapsed_ms, r.timestamp_ms])

    def _append_demographics(self, worker_id: str, demo: Mapping[str, str]) -> None:
        if not self._persist_dir:
            return
        path = os.path.join(self._persist_dir, "demographics.csv")
        fresh = not os.path.exists(path)
        with open(path, "a", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(DEMOGRAPHICS_COLUMNS)
            writer.writerow([worker_id, demo.get("gender", ""),
                             demo.get("age_group", ""), demo.get("region", "")])

    def _persist_sessions(self) -> None:
        if not self._persist_dir:
            return
        blob = {
            "next_batch": self._next_batch,
            "sessions": [
                {
                    "session_id": s.session_id,
                    "worker_id": s.worker_id,
                    "hit_id": s.batch.hit_id,
                    "cursor": s.cursor,
                    "served_at_ms": s.served_at_ms,
                    "state": s.state,
                    "responses": [
                        [r.pair_id, r.choice, r.elapsed_ms, r.timestamp_ms]
                        for r in s.responses
                    ],
                }
                for s in self.sessions.values()
            ],
        }
        path = os.path.join(self._persist_dir, "sessions.json")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(blob, fh)
        os.replace(tmp, path)

    def _restore(self) -> None:
        path = os.path.join(self._persist_dir, "sessions.json")
        if not os.path.exists(path):
            return
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
        by_hit = {b.hit_id: b for b in self._batches}
        self._next_batch = blob.get("next_batch", 0)
        for raw in blob.get("sessions", []):
            batch = by_hit.get(raw["hit_id"])
            if batch is None:
                continue
            tasks_by_pair = {t.pair_id: t for t in batch.tasks}
            responses = []
            for pair_id, choice, elapsed, ts in raw["responses"]:
                task = tasks_by_pair[pair_id]
                responses.append(Response(
                    pair_id=pair_id, worker_id=raw["worker_id"], choice=choice,
                    elapsed_ms=elapsed, timestamp_ms=ts, hit_id=batch.hit_id,
                    shape_a=task.shape_a, shape_b=task.shape_b,
                    is_control=task.is_control))
            self.sessions[raw["session_id"]] = Session(
                session_id=raw["session_id"], worker_id=raw["worker_id"], batch=batch,
                cursor=raw["cursor"], served_at_ms=raw["served_at_ms"],
                responses=responses, state=raw["state"])


def batches_to_json(batches: list[HitBatch], key: Mapping[str, str]) -> dict:
    """Server-side batches file: tasks plus the control answer key.

    Never sent to clients; the key stays on the server.
    """
    return {
        "format": "shaperank-hits",
        "version": 1,
        "hits": [
            {
                "hit_id": b.hit_id,
                "tasks": [
                    {"pair_id": t.pair_id, "shape_a": t.shape_a, "shape_b": t.shape_b,
                     "is_control": t.is_control}
                    for t in b.tasks
                ],
            }
            for b in batches
        ],
        "control_key": dict(key),
    }


def batches_from_json(blob: Mapping) -> tuple[list[HitBatch], dict[str, str]]:
    if blob.get("format") != "shaperank-hits":
        raise ValueError("not a shaperank HIT batches file")
    batches = []
    for raw in blob["hits"]:
        tasks = [PairSample(shape_a=t["shape_a"], shape_b=t["shape_b"],
                            pair_id=t["pair_id"], is_control=t["is_control"])
                 for t in raw["tasks"]]
        batches.append(HitBatch(hit_id=raw["hit_id"], tasks=tasks))
    return batches, dict(blob["control_key"])


def create_app(state: CollectionState, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="shaperank collection service")

    @app.exception_handler(ServerError)
    async def _server_error(_request, exc: ServerError):
        return JSONResponse(status_code=exc.status,
                            content={"ok": False, "error": exc.message})

    @app.post("/session")
    async def start_session(body: dict):
        worker_id = body.get("worker_id", "")
        if not worker_id:
            raise ServerError(400, "worker_id is required")
        data = state.start_session(worker_id, body.get("demographics"))
        return {"ok": True, **data}

    @app.post("/session/{session_id}/answer")
    async def submit(session_id: str, body: dict):
        if "pair_id" not in body or "choice" not in body:
            raise ServerError(400, "pair_id and choice are required")
        data = state.submit_response(session_id, body["pair_id"], body["choice"])
        return {"ok": True, **data}

    @app.get("/session/{session_id}/status")
    async def status(session_id: str):
        return {"ok": True, **state.status(session_id)}

    @app.get("/export")
    async def export(accepted: bool = False):
        rows = state.export_rows(accepted_only=accepted)
        lines = [",".join(RESPONSE_COLUMNS)]
        for r in rows:
            lines.append(f"{r.hit_id},{r.pair_id},{r.shape_a},{r.shape_b},"
                         f"{int(r.is_control)},{r.worker_id},{r.choice},"
                         f"{r.elapsed_ms},{r.timestamp_ms}")
        return PlainTextResponse("\n".join(lines) + "\n", media_type="text/csv")

    @app.get("/shape/{shape_id}")
    async def shape(shape_id: str):
        return {"ok": True, **state.shape(shape_id)}

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
