"""HTTP front door for the pipeline, knowledge base, traces, and admin.

Endpoints (all JSON):
    POST /api/query          {text, language?, image_base64?, image_ref?,
                              image_width?, image_height?}
                             -> {answer, routing, tool_output, detections?,
                                 trace_id}
    GET  /api/kb/{id}        -> knowledge entry record
    GET  /api/trace/{id}     -> {id, query, events[]}
                             (?format=ldjson: text/plain, one event per line)
    GET  /api/health         -> {version, kernel_backend, tools{}}
    POST /api/admin/reindex  -> {old_count, new_count}; X-Admin-Token header

Images may also arrive as a multipart/form-data part named "image" with
text/image_width/image_height fields. Well-formed queries never produce a
500: the pipeline answers through its fallback. Traces are kept in a
bounded in-memory ring. Queries served concurrently; the reindex swap is
atomic, so every request sees either the old or the new index in full.
"""

from __future__ import annotations

import base64
import binascii
import email.parser
import email.policy
import json
import os
import threading
import uuid
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from . import __version__, _kernels
from .core import AgentResponse, ClinicError, DataError, ImageRef, Query, ToolOutput
from .detect import to_corners
from .pipeline import Engine


class TraceRing:
    """Bounded in-memory trace store; oldest entries fall off."""

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self._entries: OrderedDict[str, dict] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, trace_id: str, record: dict) -> None:
        with self._lock:
            self._entries[trace_id] = record
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def get(self, trace_id: str) -> Optional[dict]:
        with self._lock:
            return self._entries.get(trace_id)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def render_tool_output(output: Optional[ToolOutput]) -> Optional[dict]:
    if output is None:
        return None
    if output.kind == "classify":
        pred = output.value
        return {
            "kind": "classify",
            "label": pred.label,
            "name": pred.name,
            "probabilities": list(pred.probabilities),
        }
    if output.kind == "detect":
        result = output.value
        return {
            "kind": "detect",
            "image_id": result.image_id,
            "backend": result.backend,
            "no_predictions": result.no_predictions,
            "boxes": [
                {
                    "category": b.category,
                    "confidence": b.confidence,
                    "cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h,
                }
                for b in result.boxes
            ],
        }
    context = output.value
    return {
        "kind": "retrieve",
        "keywords": list(context.keywords),
        "hits": [{"id": i, "distance": d} for i, d in context.hits],
        "entries": [e.as_record() for e in context.entries],
    }


def render_response(query: Query, response: AgentResponse, trace_id: str,
                    category_names: Optional[list[str]] = None) -> dict:
    routing = None
    if response.routing is not None:
        routing = {
            "language": response.routing.language.value,
            "intent": response.routing.intent.wire_name,
            "confidence": response.routing.prediction.confidence,
            "target_tool": response.routing.target_tool,
            "missing_image": response.routing.missing_image,
        }
    rendered: dict = {
        "answer": response.answer,
        "routing": routing,
        "tool_output": render_tool_output(response.tool_output),
        "trace_id": trace_id,
    }
    if response.tool_output is not None and response.tool_output.kind == "detect" \
            and query.image is not None:
        detections = []
        for box in response.tool_output.value.boxes:
            corners = to_corners(box, query.image.width, query.image.height)
            name = None
            if category_names and box.category < len(category_names):
                name = category_names[box.category]
            detections.append({
                "category": box.category,
                "name": name,
                "confidence": box.confidence,
                "corners": list(corners),
            })
        rendered["detections"] = detections
    return rendered


class BadRequest(Exception):
    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


def _parse_query_body(body: bytes, content_type: str, max_image_bytes: int) -> Query:
    if content_type.startswith("multipart/form-data"):
        fields, image_data = _parse_multipart(body, content_type)
    elif content_type.startswith("application/json") or not content_type:
        try:
            fields = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BadRequest(f"invalid JSON body: {exc}") from None
        if not isinstance(fields, dict):
            raise BadRequest("JSON body must be an object")
        image_data = None
        encoded = fields.get("image_base64")
        if encoded is not None:
            if not isinstance(encoded, str):
                raise BadRequest("image_base64 must be a string")
            try:
                image_data = base64.b64decode(encoded, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise BadRequest(f"invalid base64 image: {exc}") from None
    else:
        raise BadRequest(f"unsupported content type: {content_type}")

    if image_data is not None and len(image_data) > max_image_bytes:
        raise BadRequest(
            f"image exceeds the {max_image_bytes}-byte cap", status=413
        )

    text = fields.get("text", "")
    if not isinstance(text, str):
        raise BadRequest("text must be a string")
    image_ref = fields.get("image_ref")
    if image_ref is not None and not isinstance(image_ref, str):
        raise BadRequest("image_ref must be a string")

    image = None
    if image_data is not None or image_ref:
        try:
            width = int(fields.get("image_width", 0))
            height = int(fields.get("image_height", 0))
        except (TypeError, ValueError):
            raise BadRequest("image_width/image_height must be integers") from None
        if width <= 0 or height <= 0:
            raise BadRequest(
                "image_width and image_height are required with an image"
            )
        image = ImageRef(ref=image_ref, data=image_data, width=width, height=height)

    if not text and image is None:
        raise BadRequest("query needs text or an image")
    try:
        return Query(id=uuid.uuid4().hex, text=text, image=image)
    except DataError as exc:
        raise BadRequest(str(exc)) from None


def _parse_multipart(body: bytes, content_type: str) -> tuple[dict, Optional[bytes]]:
    header = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode()
    message = email.parser.BytesParser(policy=email.policy.HTTP).parsebytes(
        header + body
    )
    if not message.is_multipart():
        raise BadRequest("malformed multipart body")
    fields: dict = {}
    image_data: Optional[bytes] = None
    for part in message.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if not name:
            continue
        payload = part.get_payload(decode=True) or b""
        if name == "image":
            image_data = payload
        else:
            fields[name] = payload.decode("utf-8", errors="replace")
    return fields, image_data


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript",
    ".css": "text/css",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class ClinicHandler(BaseHTTPRequestHandler):
    server_version = "cropclinic"
    protocol_version = "HTTP/1.1"

    # quiet by default; the CLI flips this on with -v
    def log_message(self, fmt, *args):
        if getattr(self.server, "verbose", False):
            super().log_message(fmt, *args)

    @property
    def engine(self) -> Engine:
        return self.server.engine  # type: ignore[attr-defined]

    @property
    def traces(self) -> TraceRing:
        return self.server.traces  # type: ignore[attr-defined]

    def _send_json(self, status: int, payload: dict) -> None:
        raw = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def do_GET(self):  # noqa: N802 (http.server API)
        path = urlparse(self.path).path
        if path == "/api/health":
            status = self.engine.status()
            return self._send_json(200, {
                "version": __version__,
                "kernel_backend": _kernels.BACKEND,
                "tools": {
                    "router_en": status.router_en,
                    "router_zh": status.router_zh,
                    "classifier": status.classifier,
                    "detector": status.detector,
                    "retriever": status.retriever,
                },
            })
        if path.startswith("/api/kb/"):
            return self._get_kb_entry(path[len("/api/kb/"):])
        if path.startswith("/api/trace/"):
            record = self.traces.get(path[len("/api/trace/"):])
            if record is None:
                return self._send_json(404, {"error": "unknown trace id"})
            query = parse_qs(urlparse(self.path).query)
            if query.get("format") == ["ldjson"]:
                lines = "".join(
                    json.dumps(event, ensure_ascii=False) + "\n"
                    for event in record["events"]
                )
                raw = lines.encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "text/plain; charset=utf-8")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)
                return
            return self._send_json(200, record)
        if self._serve_static(path):
            return
        self._send_json(404, {"error": "not found"})

    def _get_kb_entry(self, raw_id: str) -> None:
        kb = self.engine.kb
        try:
            entry_id = int(raw_id)
        except ValueError:
            return self._send_json(404, {"error": "unknown entry id"})
        entry = kb.get(entry_id) if kb is not None else None
        if entry is None:
            return self._send_json(404, {"error": "unknown entry id"})
        self._send_json(200, entry.as_record())

    def do_POST(self):  # noqa: N802
        path = urlparse(self.path).path
        if path == "/api/query":
            return self._post_query()
        if path == "/api/admin/reindex":
            return self._post_reindex()
        self._send_json(404, {"error": "not found"})

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0) or 0)
        cap = self.engine.config.max_image_bytes + 1_048_576  # body overhead slack
        if length > cap:
            raise BadRequest("request body too large", status=413)
        return self.rfile.read(length)

    def _post_query(self) -> None:
        try:
            body = self._read_body()
            query = _parse_query_body(
                body,
                self.headers.get("Content-Type", ""),
                self.engine.config.max_image_bytes,
            )
        except BadRequest as exc:
            return self._send_json(exc.status, {"error": str(exc)})

        limiter: threading.Semaphore = self.server.in_flight  # type: ignore[attr-defined]
        with limiter:
            response = self.engine.handle_query(query)
        trace_id = query.id
        self.traces.put(trace_id, {
            "id": trace_id,
            "query": query.text,
            "events": [e.as_record() for e in response.trace],
        })
        rendered = render_response(
            query, response, trace_id, self.engine.category_names()
        )
        self._send_json(200, rendered)

    def _post_reindex(self) -> None:
        expected = os.environ.get(self.engine.config.admin_token_env, "")
        provided = self.headers.get("X-Admin-Token", "")
        if not expected or provided != expected:
            return self._send_json(401, {"error": "missing or bad admin token"})
        try:
            old, new = self.engine.reindex()
        except ClinicError as exc:
            return self._send_json(409, {"error": str(exc)})
        self._send_json(200, {"old_count": old, "new_count": new})

    def _serve_static(self, path: str) -> bool:
        static_dir: Optional[Path] = getattr(self.server, "static_dir", None)
        if static_dir is None:
            return False
        if path in ("/", "/ui", "/ui/"):
            path = "/index.html"
        elif path.startswith("/ui/"):
            path = path[len("/ui"):]
        candidate = (static_dir / path.lstrip("/")).resolve()
        try:
            candidate.relative_to(static_dir.resolve())
        except ValueError:
            return False
        if not candidate.is_file():
            return False
        raw = candidate.read_bytes()
        self.send_response(200)
        self.send_header(
            "Content-Type",
            _CONTENT_TYPES.get(candidate.suffix, "application/octet-stream"),
        )
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)
        return True


def make_server(engine: Engine, host: str = "127.0.0.1", port: int = 8420,
                static_dir: Optional[Path] = None,
                verbose: bool = False) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), ClinicHandler)
    server.daemon_threads = True
    server.engine = engine  # type: ignore[attr-defined]
    server.traces = TraceRing(engine.config.trace_ring)  # type: ignore[attr-defined]
    server.in_flight = threading.Semaphore(  # type: ignore[attr-defined]
        engine.config.max_in_flight
    )
    server.static_dir = static_dir  # type: ignore[attr-defined]
    server.verbose = verbose  # type: ignore[attr-defined]
    return server
