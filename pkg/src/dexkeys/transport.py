"""Wire bindings for :class:`~dexkeys.service.ExchangeService`.

TCP framing: each message is a 4-byte big-endian length followed by that
many bytes of JSON.  Requests are ``{"op": ..., "body": {...}}``; responses
are ``{"ok": true, "result": {...}}`` or ``{"ok": false, "error": {...}}``.

HTTP binding: ``POST /v1/<op>`` with the body as JSON, plus
``GET /v1/paillier`` and ``GET /v1/health``.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

from .errors import DexKeysError, PolicyDenied, ServiceError, TransportError

log = logging.getLogger(__name__)

HEADER = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024

POST_OPS = ("register", "pool", "sign", "policy", "cancel", "ticket")
GET_OPS = ("paillier", "health")

_HTTP_STATUS = {
    "policy_denied": 403,
    "auth": 401,
    "unknown_key": 404,
    "unknown_ticket": 404,
    "unknown_op": 404,
    "replay": 409,
    "duplicate": 409,
    "already_released": 409,
    "stale_version": 409,
}


def error_payload(exc: DexKeysError) -> dict:
    err = {"code": exc.code, "message": str(exc)}
    if isinstance(exc, PolicyDenied):
        err["reason"] = exc.reason
    return err


def raise_from_payload(err: dict) -> None:
    code = err.get("code", "error")
    if code == "policy_denied":
        raise PolicyDenied(err.get("reason", "denied"), err.get("message", ""))
    raise ServiceError(code, err.get("message", ""), detail=err)


def call_service(service, op: str, body: dict | None, source_ip: str | None) -> tuple[bool, dict]:
    try:
        return True, service.dispatch(op, body, source_ip)
    except DexKeysError as exc:
        return False, error_payload(exc)
    except Exception:
        log.exception("internal error handling %s", op)
        return False, {"code": "internal", "message": "internal error"}


# ------------------------------------------------------------------ framing

def send_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_FRAME:
        raise ValueError("frame too large")
    sock.sendall(HEADER.pack(len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket) -> bytes | None:
    """Read one frame; ``None`` on clean EOF before a header."""
    first = sock.recv(HEADER.size)
    if not first:
        return None
    header = first + (_recv_exact(sock, HEADER.size - len(first)) if len(first) < HEADER.size else b"")
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise ValueError("frame too large")
    return _recv_exact(sock, length)


# ------------------------------------------------------------------ servers

class _TcpHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        service = self.server.service
        ip = self.client_address[0]
        while True:
            try:
                frame = recv_frame(self.request)
            except (ConnectionError, ValueError, OSError):
                return
            if frame is None:
                return
            try:
                req = json.loads(frame)
                op, body = req["op"], req.get("body")
            except (ValueError, KeyError, TypeError):
                reply = {"ok": False, "error": {"code": "malformed", "message": "bad request frame"}}
            else:
                ok, data = call_service(service, op, body, ip)
                reply = {"ok": True, "result": data} if ok else {"ok": False, "error": data}
            try:
                send_frame(self.request, json.dumps(reply).encode())
            except OSError:
                return


class TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service, address: tuple[str, int]) -> None:
        self.service = service
        super().__init__(address, _TcpHandler)


class _HttpHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args) -> None:
        log.debug("%s " + fmt, self.client_address[0], *args)

    def _reply(self, status: int, doc: dict) -> None:
        data = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _op(self, allowed) -> str | None:
        path = self.path.split("?", 1)[0]
        if not path.startswith("/v1/"):
            return None
        op = path[len("/v1/"):]
        return op if op in allowed else None

    def _run(self, op: str, body: dict | None) -> None:
        ok, data = call_service(self.server.service, op, body, self.client_address[0])
        if ok:
            self._reply(200, data)
        else:
            code = data.get("code")
            status = 500 if code == "internal" else _HTTP_STATUS.get(code, 400)
            self._reply(status, {"error": data})

    def do_GET(self) -> None:
        op = self._op(GET_OPS)
        if op is None:
            self._reply(404, {"error": {"code": "unknown_op", "message": self.path}})
            return
        self._run(op, None)

    def do_POST(self) -> None:
        op = self._op(POST_OPS)
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_FRAME:
            self._reply(413, {"error": {"code": "malformed", "message": "body too large"}})
            return
        raw = self.rfile.read(length) if length else b""
        if op is None:
            self._reply(404, {"error": {"code": "unknown_op", "message": self.path}})
            return
        try:
            body = json.loads(raw or b"{}")
        except ValueError:
            self._reply(400, {"error": {"code": "malformed", "message": "body is not JSON"}})
            return
        self._run(op, body)


class HttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, service, address: tuple[str, int]) -> None:
        self.service = service
        super().__init__(address, _HttpHandler)


def start_in_thread(server) -> threading.Thread:
    t = threading.Thread(target=server.serve_forever, name=type(server).__name__, daemon=True)
    t.start()
    return t


# ------------------------------------------------------------------ clients

class InProcessTransport:
    """Calls the service directly; round-trips bodies through JSON like a real wire."""

    def __init__(self, service, source_ip: str | None = "127.0.0.1") -> None:
        self.service = service
        self.source_ip = source_ip

    def request(self, op: str, body: dict | None = None) -> dict:
        wire_body = json.loads(json.dumps(body)) if body is not None else None
        try:
            ok, data = call_service(self.service, op, wire_body, self.source_ip)
        except BaseException as exc:  # a simulated crash surfaces as a dropped connection
            if isinstance(exc, (KeyboardInterrupt, SystemExit)):
                raise
            raise TransportError(f"server failed during {op}: {exc.__class__.__name__}") from exc
        if not ok:
            raise_from_payload(data)
        return json.loads(json.dumps(data))


class TcpTransport:
    def __init__(self, host: str, port: int, timeout: float = 30.0) -> None:
        self.address = (host, port)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self._sock is None:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        return self._sock

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def request(self, op: str, body: dict | None = None) -> dict:
        payload = json.dumps({"op": op, "body": body}).encode()
        with self._lock:
            try:
                sock = self._connect()
                send_frame(sock, payload)
                frame = recv_frame(sock)
            except OSError as exc:
                self.close()
                raise TransportError(str(exc)) from exc
            if frame is None:
                self.close()
                raise TransportError("connection closed")
        reply = json.loads(frame)
        if not reply.get("ok"):
            raise_from_payload(reply.get("error", {}))
        return reply["result"]


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 30.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def request(self, op: str, body: dict | None = None) -> dict:
        url = f"{self.base_url}/v1/{op}"
        if op in GET_OPS:
            req = urllib.request.Request(url, method="GET")
        else:
            req = urllib.request.Request(url, data=json.dumps(body or {}).encode(), method="POST",
                                         headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            try:
                doc = json.loads(exc.read())
            except ValueError:
                raise TransportError(f"HTTP {exc.code}") from None
            raise_from_payload(doc.get("error", {}))
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(str(exc)) from exc


class RecordingTransport:
    """Wraps another transport and logs every client-to-server message."""

    def __init__(self, inner, on_request: Callable[[str, dict], None] | None = None) -> None:
        self.inner = inner
        self.transcript: list[tuple[str, int]] = []
        self.on_request = on_request

    def request(self, op: str, body: dict | None = None) -> dict:
        self.transcript.append((op, len(json.dumps(body).encode()) if body is not None else 0))
        if self.on_request is not None:
            self.on_request(op, body)
        return self.inner.request(op, body)

    def clear(self) -> None:
        self.transcript.clear()


def transport_for(endpoint: str):
    """``http://host:port`` or ``tcp://host:port``."""
    if endpoint.startswith(("http://", "https://")):
        return HttpTransport(endpoint)
    if endpoint.startswith("tcp://"):
        host, _, port = endpoint[len("tcp://"):].rpartition(":")
        return TcpTransport(host, int(port))
    raise ValueError(f"unsupported endpoint {endpoint!r}")
