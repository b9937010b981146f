"""Small HTTP plumbing shared by every service: a threaded JSON-over-HTTP
server with pattern routing, and a urllib-based client helper.

Nothing here knows about the domain; each service registers routes and
raises ApiError for protocol failures.
"""

from __future__ import annotations

import errno
import json
import logging
import re
import socket
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

log = logging.getLogger(__name__)


class ApiError(Exception):
    """Maps to an HTTP error response {"error": code, "message": ...}."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code
        self.message = message


def bad_request(message: str) -> ApiError:
    return ApiError(400, "BadRequest", message)


def not_found(message: str) -> ApiError:
    return ApiError(404, "NotFound", message)


def conflict(message: str) -> ApiError:
    return ApiError(409, "Conflict", message)


def method_not_allowed(message: str) -> ApiError:
    return ApiError(405, "MethodNotAllowed", message)


class PortInUse(OSError):
    def __init__(self, port: int):
        super().__init__(f"port {port} is already in use")
        self.port = port


class TransportError(ConnectionError):
    """The peer could not be reached (connection, DNS or timeout failure)."""


@dataclass
class HttpRequest:
    method: str
    path: str
    query: dict[str, list[str]]
    headers: dict[str, str]
    body: bytes
    params: dict[str, str] = field(default_factory=dict)

    def query_first(self, name: str) -> str | None:
        values = self.query.get(name)
        return values[0] if values else None

    def text(self) -> str:
        try:
            return self.body.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise bad_request(f"body is not valid UTF-8: {exc}") from exc

    def json(self) -> Any:
        text = self.text()
        if not text.strip():
            raise bad_request("expected a JSON body")
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise bad_request(f"malformed JSON body: {exc}") from exc

    def header(self, name: str) -> str | None:
        return self.headers.get(name.lower())


@dataclass
class HttpResponse:
    status: int = 200
    payload: Any = None  # JSON-serializable, or None for empty body
    content_type: str = "application/json"
    raw: bytes | None = None  # overrides payload when set


Handler = Callable[[HttpRequest], HttpResponse]


class Router:
    """Routes (method, path pattern) pairs; `{name}` matches one segment,
    `{name:path}` greedily matches the rest (including slashes)."""

    def __init__(self):
        self._routes: list[tuple[str, re.Pattern, Handler]] = []

    def add(self, method: str, pattern: str, handler: Handler) -> None:
        regex = "^"
        for part in re.split(r"(\{[^}]+\})", pattern):
            if part.startswith("{") and part.endswith("}"):
                name = part[1:-1]
                if name.endswith(":path"):
                    regex += f"(?P<{name[:-5]}>.+)"
                else:
                    regex += f"(?P<{name}>[^/]+)"
            else:
                regex += re.escape(part)
        regex += "$"
        self._routes.append((method.upper(), re.compile(regex), handler))

    def dispatch(self, request: HttpRequest) -> HttpResponse:
        path_matched = False
        for method, regex, handler in self._routes:
            m = regex.match(request.path)
            if not m:
                continue
            path_matched = True
            if method != request.method:
                continue
            request.params = m.groupdict()
            return handler(request)
        if path_matched:
            raise method_not_allowed(f"{request.method} not supported on {request.path}")
        raise not_found(f"no such path: {request.path}")


class JsonHttpService:
    """Base for the artifact's services; subclasses register routes."""

    name = "service"

    def __init__(self):
        self.router = Router()
        self.router.add("GET", "/health", lambda req: HttpResponse(200, {"status": "ok", "service": self.name}))

    def handle(self, request: HttpRequest) -> HttpResponse:
        try:
            return self.router.dispatch(request)
        except ApiError as exc:
            return HttpResponse(exc.status, {"error": exc.code, "message": exc.message})
        except Exception:  # pragma: no cover - defensive
            log.exception("%s: unhandled error on %s %s", self.name, request.method, request.path)
            return HttpResponse(500, {"error": "InternalError", "message": "unhandled server error"})

    def close(self) -> None:
        """Release background resources; called when the server stops."""


def _make_handler(service: JsonHttpService):
    class RequestHandler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _run(self, method: str) -> None:
            parsed = urllib.parse.urlsplit(self.path)
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            request = HttpRequest(
                method=method,
                path=urllib.parse.unquote(parsed.path),
                query=urllib.parse.parse_qs(parsed.query),
                headers={k.lower(): v for k, v in self.headers.items()},
                body=body,
            )
            response = service.handle(request)
            if response.raw is not None:
                data = response.raw
            elif response.payload is None:
                data = b""
            else:
                data = json.dumps(response.payload, sort_keys=True).encode("utf-8")
            self.send_response(response.status)
            self.send_header("Content-Type", response.content_type)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            if data:
                self.wfile.write(data)

        def do_GET(self):
            self._run("GET")

        def do_POST(self):
            self._run("POST")

        def do_PUT(self):
            self._run("PUT")

        def do_DELETE(self):
            self._run("DELETE")

        def log_message(self, fmt, *args):  # route access logs away from stderr
            log.debug("%s %s", service.name, fmt % args)

    return RequestHandler


class ServerHandle:
    """A running service bound to a port; stop() is idempotent."""

    def __init__(self, service: JsonHttpService, host: str, port: int):
        self.service = service
        try:
            self._server = ThreadingHTTPServer((host, port), _make_handler(service))
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise PortInUse(port) from exc
            raise
        self._server.daemon_threads = True
        self.host = host
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
        )
        self._thread.start()
        self._stopped = False

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)
        self.service.close()


def run_service(service: JsonHttpService, port: int, host: str = "127.0.0.1") -> ServerHandle:
    return ServerHandle(service, host, port)


# --- client ------------------------------------------------------------------


def request_json(
    method: str,
    url: str,
    body: Any = None,
    headers: dict[str, str] | None = None,
    timeout: float = 10.0,
) -> tuple[int, Any]:
    """Issue a request; JSON bodies in, parsed JSON (or text) out.

    4xx/5xx responses are returned, not raised; network-level failures
    raise TransportError. A string body is sent as text/plain.
    """
    data = None
    req_headers = dict(headers or {})
    if body is not None:
        if isinstance(body, str):
            data = body.encode("utf-8")
            req_headers.setdefault("Content-Type", "text/plain; charset=utf-8")
        elif isinstance(body, bytes):
            data = body
            req_headers.setdefault("Content-Type", "application/octet-stream")
        else:
            data = json.dumps(body).encode("utf-8")
            req_headers.setdefault("Content-Type", "application/json")
    request = urllib.request.Request(url, data=data, headers=req_headers, method=method.upper())
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            return response.status, _parse_body(response.read())
    except urllib.error.HTTPError as exc:
        return exc.code, _parse_body(exc.read())
    except (urllib.error.URLError, socket.timeout, ConnectionError, OSError) as exc:
        raise TransportError(f"{method} {url}: {exc}") from exc


def _parse_body(data: bytes) -> Any:
    if not data:
        return None
    try:
        return json.loads(data.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError):
        return data.decode("utf-8", errors="replace")


def get_json(url: str, timeout: float = 10.0) -> tuple[int, Any]:
    return request_json("GET", url, timeout=timeout)


def post_json(url: str, body: Any, timeout: float = 10.0) -> tuple[int, Any]:
    return request_json("POST", url, body=body, timeout=timeout)


def wait_healthy(base_url: str, timeout: float = 5.0) -> None:
    deadline = time.monotonic() + timeout
    while True:
        try:
            status, _ = get_json(base_url + "/health", timeout=1.0)
            if status == 200:
                return
        except TransportError:
            pass
        if time.monotonic() > deadline:
            raise TransportError(f"service at {base_url} did not become healthy within {timeout}s")
        time.sleep(0.05)


def find_free_port(host: str = "127.0.0.1") -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]
