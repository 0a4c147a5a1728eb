"""Gateway-style HTTP API.

    POST /function/{name}   raw body in, 200 {result, duration_ms, replica, node}
                            or 504 when the invocation timed out
    GET  /system/functions  list of deployments
"""

from __future__ import annotations

import json
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .gateway import Gateway, UnknownFunction


def handle_request(gateway: Gateway, method: str, path: str, body: bytes = b"",
                   timeout_ms: float | None = None) -> tuple[int, bytes]:
    """Route one request; returns (status code, JSON body)."""
    path = path.split("?", 1)[0].rstrip("/")
    if method == "GET" and path == "/system/functions":
        return HTTPStatus.OK, json.dumps(gateway.functions(), sort_keys=True).encode()
    if method == "POST" and path.startswith("/function/"):
        name = path[len("/function/"):]
        try:
            response, record = gateway.invoke(name, body, timeout_ms)
        except UnknownFunction:
            return HTTPStatus.NOT_FOUND, json.dumps({"error": f"function {name} not found"}).encode()
        if record.outcome.value == "timeout":
            return HTTPStatus.GATEWAY_TIMEOUT, json.dumps(
                {"error": "timeout", "replica": record.replica, "node": record.node}
            ).encode()
        if response is None:
            return HTTPStatus.INTERNAL_SERVER_ERROR, json.dumps({"error": "function failed"}).encode()
        return HTTPStatus.OK, response
    if path in ("/system/functions",) or path.startswith("/function/"):
        return HTTPStatus.METHOD_NOT_ALLOWED, json.dumps({"error": "method not allowed"}).encode()
    return HTTPStatus.NOT_FOUND, json.dumps({"error": "not found"}).encode()


def make_server(gateway: Gateway, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _respond(self, method: str) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            status, payload = handle_request(gateway, method, self.path, body)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self) -> None:
            self._respond("GET")

        def do_POST(self) -> None:
            self._respond("POST")

        def log_message(self, format, *args) -> None:
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    server.daemon_threads = True
    return server


def serve_in_background(gateway: Gateway, host: str = "127.0.0.1", port: int = 0):
    server = make_server(gateway, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
