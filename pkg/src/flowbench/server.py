"""Wire-protocol tool service for external agents.

Frames are a 4-byte big-endian length followed by a UTF-8 JSON body, carried
over a local TCP socket or over stdin/stdout. Requests are
``{"id": ..., "method": ..., "params": {...}}``; every request gets exactly
one response, ``{"id": ..., "result": ...}`` or
``{"id": ..., "error": {"code": ..., "message": ...}}``. Sessions are
isolated: each owns a private episode and database, and requests within a
session are serialized.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import sys
import threading
import time

from .environment import Environment, RUNNING
from .errors import EpisodeError, FlowbenchError, ProtocolError, TaskError
from .tools import Action

E_PARSE = "parse_error"
E_UNKNOWN_METHOD = "unknown_method"
E_INVALID_PARAMS = "invalid_params"
E_UNKNOWN_TASK = "unknown_task"
E_UNKNOWN_SESSION = "unknown_session"
E_SESSION_CLOSED = "session_closed"
E_INTERNAL = "internal_error"

DEFAULT_IDLE_SECONDS = 900.0


class Session:
    def __init__(self, session_id: str, episode, idle_seconds: float):
        self.session_id = session_id
        self.episode = episode
        self.created_at = time.monotonic()
        self.idle_seconds = idle_seconds
        self.deadline = self.created_at + idle_seconds
        self.lock = threading.Lock()

    def touch(self) -> None:
        self.deadline = time.monotonic() + self.idle_seconds


class ToolService:
    """Protocol logic, transport-agnostic; handle() maps request to response."""

    def __init__(self, env: Environment, idle_seconds: float = DEFAULT_IDLE_SECONDS):
        self.env = env
        self.idle_seconds = idle_seconds
        self.sessions: dict[str, Session] = {}
        self._counter = 0
        self._lock = threading.Lock()

    # -------------------------------------------------------------- dispatch

    def handle(self, message: dict) -> dict:
        request_id = message.get("id")
        method = message.get("method")
        params = message.get("params") or {}
        if not isinstance(method, str):
            return self._error(request_id, E_INVALID_PARAMS, "request needs a method")
        handler = getattr(self, f"_method_{method}", None)
        if handler is None:
            return self._error(request_id, E_UNKNOWN_METHOD, f"unknown method {method!r}")
        try:
            return {"id": request_id, "result": handler(params)}
        except _ServiceError as exc:
            return self._error(request_id, exc.code, str(exc))
        except (TaskError, EpisodeError, FlowbenchError) as exc:
            return self._error(request_id, E_INVALID_PARAMS, str(exc))
        except Exception as exc:  # noqa: BLE001 - protocol totality over purity
            return self._error(request_id, E_INTERNAL, f"{type(exc).__name__}: {exc}")

    def handle_raw(self, payload: bytes) -> dict:
        try:
            message = json.loads(payload.decode("utf-8"))
            if not isinstance(message, dict):
                raise ValueError("frame is not an object")
        except (ValueError, UnicodeDecodeError) as exc:
            return self._error(None, E_PARSE, f"malformed frame: {exc}")
        return self.handle(message)

    @staticmethod
    def _error(request_id, code: str, message: str) -> dict:
        return {"id": request_id, "error": {"code": code, "message": message}}

    def _session(self, params: dict) -> Session:
        session_id = params.get("session_id")
        with self._lock:
            self._purge_idle()
            session = self.sessions.get(session_id or "")
        if session is None:
            raise _ServiceError(E_UNKNOWN_SESSION, f"unknown session {session_id!r}")
        session.touch()
        return session

    def _purge_idle(self) -> None:
        # callers hold self._lock
        now = time.monotonic()
        for sid in [s for s, sess in self.sessions.items() if sess.deadline < now]:
            del self.sessions[sid]

    # -------------------------------------------------------------- methods

    def _method_start_session(self, params: dict) -> dict:
        task_id = params.get("task_id")
        mode = params.get("mode", "tool")
        seed = int(params.get("seed", 0))
        task = None
        if task_id is not None:
            try:
                task = self.env.suite.get(str(task_id))
            except TaskError as exc:
                raise _ServiceError(E_UNKNOWN_TASK, str(exc)) from exc
        episode = self.env.reset(task, mode=mode, seed=seed)
        with self._lock:
            self._counter += 1
            session_id = f"session-{self._counter:06d}"
            self.sessions[session_id] = Session(session_id, episode, self.idle_seconds)
        return {"session_id": session_id, "mode": mode}

    def _method_list_tools(self, params: dict) -> dict:
        return {"tools": self.env.registry.to_doc()}

    def _method_get_task(self, params: dict) -> dict:
        session = self._session(params)
        task = session.episode.task
        if task is None:
            return {"task": None}
        from .constraints import constraint_descriptions

        names = constraint_descriptions()
        return {"task": {
            "id": task.id,
            "category": task.category,
            "description": task.description,
            "constraints": [
                {"id": cid, "description": names.get(cid, "")} for cid in task.constraints
            ],
        }}

    def _method_call_tool(self, params: dict) -> dict:
        session = self._session(params)
        action_doc = params.get("action")
        if not isinstance(action_doc, dict):
            raise _ServiceError(E_INVALID_PARAMS, "call_tool needs an action object")
        with session.lock:
            if session.episode.status != RUNNING:
                raise _ServiceError(E_SESSION_CLOSED,
                                    f"episode is {session.episode.status}")
            observation = self.env.step(session.episode, Action.from_doc(action_doc))
        return observation.to_doc()

    def _method_report_impossible(self, params: dict) -> dict:
        session = self._session(params)
        with session.lock:
            if session.episode.status != RUNNING:
                raise _ServiceError(E_SESSION_CLOSED,
                                    f"episode is {session.episode.status}")
            self.env.report_impossible(session.episode, str(params.get("reason", "")))
        return {"status": session.episode.status}

    def _method_finish(self, params: dict) -> dict:
        session = self._session(params)
        with session.lock:
            if session.episode.status != RUNNING:
                raise _ServiceError(E_SESSION_CLOSED,
                                    f"episode is {session.episode.status}")
            if params.get("cost") is not None:
                session.episode.cost = str(params["cost"])
            self.env.finish(session.episode)
        return {"status": session.episode.status,
                "steps": session.episode.step_count,
                "cost": session.episode.cost}


class _ServiceError(FlowbenchError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------- framing


def write_frame(stream, doc: dict) -> None:
    body = json.dumps(doc, separators=(",", ":")).encode("utf-8")
    stream.write(struct.pack(">I", len(body)) + body)
    stream.flush()


def read_frame(stream) -> bytes | None:
    header = stream.read(4)
    if not header:
        return None
    if len(header) < 4:
        raise ProtocolError("truncated frame header")
    (length,) = struct.unpack(">I", header)
    if length > 16 * 1024 * 1024:
        raise ProtocolError(f"frame of {length} bytes exceeds the limit")
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise ProtocolError("truncated frame body")
        body += chunk
    return body


def send_request(sock: socket.socket, doc: dict) -> dict:
    """Client-side helper: one frame out, one frame back."""
    stream = sock.makefile("rwb")
    write_frame(stream, doc)
    body = read_frame(stream)
    if body is None:
        raise ProtocolError("connection closed mid-request")
    return json.loads(body.decode("utf-8"))


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        stream = self.request.makefile("rwb")
        while True:
            try:
                body = read_frame(stream)
            except ProtocolError as exc:
                write_frame(stream, ToolService._error(None, E_PARSE, str(exc)))
                return
            if body is None:
                return
            response = self.server.service.handle_raw(body)
            write_frame(stream, response)


class FlowbenchServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: ToolService, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _FrameHandler)
        self.service = service

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address


def serve_tcp(service: ToolService, host: str = "127.0.0.1", port: int = 0,
              ready_callback=None) -> None:
    try:
        server = FlowbenchServer(service, host, port)
    except OSError as exc:
        raise ProtocolError(f"cannot bind {host}:{port}: {exc}") from exc
    if ready_callback is not None:
        ready_callback(server)
    with server:
        server.serve_forever()


def serve_stdio(service: ToolService, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    while True:
        try:
            body = read_frame(stdin)
        except ProtocolError as exc:
            # framing is unrecoverable on a byte stream
            write_frame(stdout, ToolService._error(None, E_PARSE, str(exc)))
            return
        if body is None:
            return
        write_frame(stdout, service.handle_raw(body))
