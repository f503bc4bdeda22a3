"""A local ``POST /verify`` critic service backed by the ground-truth oracle."""

from __future__ import annotations

import base64
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping

from .assets import AssetCatalog, load_catalog
from .sim import DELTA_POS, Subtask, check_postcondition, state_from_dict

log = logging.getLogger(__name__)

Route = Callable[[dict], tuple[int, dict]]


def verify_route(catalog: AssetCatalog, delta_pos: float = DELTA_POS) -> Route:
    def handle(body: dict) -> tuple[int, dict]:
        try:
            image = base64.b64decode(body["image_pgm_b64"], validate=True)
            meta = body["meta"]
            body["subtask_text"]
            state = state_from_dict(meta["state"], catalog)
            subtask = Subtask.from_dict(meta["subtask"])
        except (KeyError, TypeError, ValueError) as exc:
            return 400, {"error": f"bad request: {exc!r}"}
        if not image.startswith(b"P5"):
            return 400, {"error": "image is not a binary PGM"}
        ok = check_postcondition(state, subtask, delta_pos)
        return 200, {"verdict": int(ok), "confidence": 1.0}

    return handle


def make_server(routes: Mapping[str, Route], host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """JSON POST server dispatching on path; ``port=0`` picks a free port."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            route = routes.get(self.path)
            if route is None:
                return self._send(404, {"error": f"no route {self.path}"})
            length = int(self.headers.get("Content-Length") or 0)
            try:
                body = json.loads(self.rfile.read(length))
            except ValueError:
                return self._send(400, {"error": "body is not JSON"})
            if not isinstance(body, dict):
                return self._send(400, {"error": "body is not a JSON object"})
            status, reply = route(body)
            self._send(status, reply)

        def _send(self, status: int, payload: dict):
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

    server = ThreadingHTTPServer((host, port), Handler)
    server.daemon_threads = True
    return server


def critic_server(host: str = "127.0.0.1", port: int = 0, catalog: AssetCatalog | None = None) -> ThreadingHTTPServer:
    return make_server({"/verify": verify_route(catalog or load_catalog())}, host, port)


class running:
    """Context manager serving ``server`` on a background thread; yields its base URL."""

    def __init__(self, server: ThreadingHTTPServer):
        self.server = server
        self.thread = threading.Thread(target=server.serve_forever, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join()
