"""Session service over two transports: NDJSON on stdio and HTTP JSON.

Both transports drive the same SessionManager, so scores are identical to
batch replay. Requests and responses are single JSON objects; errors keep
the session alive and come back structured.

NDJSON requests (one per line):
    {"op": "open",   "entity": {...}}                  -> {"ok": true, "session": "s000001", "t": 2880}
    {"op": "step",   "session": id, "t": 2881,
     "values": [{"service": "svc", "metric": "cpu_usage", "value": 1.2}, ...]}
                                                       -> {"ok": true, "report": {...}}
    {"op": "scores", "session": id}                    -> {"ok": true, "reports": [...]}
    {"op": "close",  "session": id}                    -> {"ok": true, "summary": {...}}
Errors: {"ok": false, "error": {"code": "...", "message": "..."}}.

HTTP routes (application/json):
    POST   /sessions                 body {"entity": {...}}
    POST   /sessions/<id>/step       body {"t": ..., "values": [...]}
    GET    /sessions/<id>/scores
    DELETE /sessions/<id>
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import IO

from deploywatch.data import DatasetError, SeriesKey, entity_from_json
from deploywatch.hybrid import HybridModel
from deploywatch.stream import EntitySession, SessionConfig, SessionError

log = logging.getLogger(__name__)


class ServiceError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message

    def to_json(self) -> dict:
        return {"ok": False, "error": {"code": self.code, "message": self.message}}


class SessionManager:
    """Owns live sessions; one lock per session, sessions run concurrently."""

    def __init__(self, model: HybridModel, config: SessionConfig | None = None):
        self.model = model
        self.config = config or SessionConfig()
        self._sessions: dict[str, tuple[EntitySession, threading.Lock]] = {}
        self._lock = threading.Lock()
        self._counter = 0

    def open(self, entity_obj: dict) -> dict:
        try:
            entity = entity_from_json(entity_obj)
        except DatasetError as exc:
            raise ServiceError("bad_entity", str(exc)) from exc
        try:
            session = EntitySession(entity, self.model, self.config)
        except (SessionError, ValueError) as exc:
            raise ServiceError("open_failed", str(exc)) from exc
        with self._lock:
            self._counter += 1
            session_id = f"s{self._counter:06d}"
            self._sessions[session_id] = (session, threading.Lock())
        return {"ok": True, "session": session_id, "t": session.t}

    def _get(self, session_id: str) -> tuple[EntitySession, threading.Lock]:
        with self._lock:
            entry = self._sessions.get(session_id)
        if entry is None:
            raise ServiceError("unknown_session", f"no session {session_id!r}")
        return entry

    def step(self, session_id: str, t: int, values: list[dict]) -> dict:
        session, lock = self._get(session_id)
        obs: dict[SeriesKey, float | None] = {}
        for v in values:
            try:
                key = SeriesKey(service=str(v["service"]), metric=str(v["metric"]))
            except (KeyError, TypeError) as exc:
                raise ServiceError("bad_values", f"bad step value entry: {v!r}") from exc
            value = v.get("value")
            if value is not None and not isinstance(value, (int, float)):
                raise ServiceError("bad_values", f"non-numeric value for {key}")
            obs[key] = value
        with lock:
            try:
                report = session.step(int(t), obs)
            except SessionError as exc:
                raise ServiceError("bad_step", str(exc)) from exc
        return {"ok": True, "report": report.to_json()}

    def scores(self, session_id: str) -> dict:
        session, lock = self._get(session_id)
        with lock:
            reports = [r.to_json() for r in session.reports]
        return {"ok": True, "reports": reports}

    def close(self, session_id: str) -> dict:
        session, lock = self._get(session_id)
        with lock:
            summary = {
                "steps": session.t - session.entity.t_history,
                "rolled_back": session.rolled_back,
            }
        with self._lock:
            self._sessions.pop(session_id, None)
        return {"ok": True, "summary": summary}

    def handle(self, request: dict) -> dict:
        """Dispatch one NDJSON-style request object."""
        try:
            op = request.get("op")
            if op == "open":
                return self.open(request.get("entity") or {})
            if op == "step":
                return self.step(
                    str(request.get("session")),
                    request.get("t", -1),
                    request.get("values") or [],
                )
            if op == "scores":
                return self.scores(str(request.get("session")))
            if op == "close":
                return self.close(str(request.get("session")))
            raise ServiceError("bad_op", f"unknown op {op!r}")
        except ServiceError as exc:
            return exc.to_json()


def serve_ndjson(manager: SessionManager, stdin: IO[str], stdout: IO[str]) -> None:
    """Line-by-line request/response loop on text streams."""
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = ServiceError("bad_json", f"malformed request: {exc.msg}").to_json()
        else:
            response = manager.handle(request)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()


class _Handler(BaseHTTPRequestHandler):
    manager: SessionManager  # set by make_http_server

    def log_message(self, fmt: str, *args) -> None:  # route through logging
        log.debug("http: " + fmt, *args)

    def _reply(self, payload: dict, status: int = 200) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ServiceError("bad_json", f"malformed request body: {exc}") from exc
        if not isinstance(obj, dict):
            raise ServiceError("bad_json", "request body must be a JSON object")
        return obj

    def _dispatch(self, method: str) -> None:
        parts = [p for p in self.path.split("/") if p]
        try:
            if method == "POST" and parts == ["sessions"]:
                self._reply(self.manager.open(self._body().get("entity") or {}))
            elif method == "POST" and len(parts) == 3 and parts[0] == "sessions" and parts[2] == "step":
                body = self._body()
                self._reply(
                    self.manager.step(parts[1], body.get("t", -1), body.get("values") or [])
                )
            elif method == "GET" and len(parts) == 3 and parts[0] == "sessions" and parts[2] == "scores":
                self._reply(self.manager.scores(parts[1]))
            elif method == "DELETE" and len(parts) == 2 and parts[0] == "sessions":
                self._reply(self.manager.close(parts[1]))
            else:
                self._reply(
                    ServiceError("not_found", f"no route {method} {self.path}").to_json(), 404
                )
        except ServiceError as exc:
            status = 404 if exc.code == "unknown_session" else 400
            self._reply(exc.to_json(), status)

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_DELETE(self) -> None:
        self._dispatch("DELETE")


def make_http_server(
    manager: SessionManager, host: str = "127.0.0.1", port: int = 8787
) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"manager": manager})
    return ThreadingHTTPServer((host, port), handler)
