"""Threaded HTTP server mounting the API router on one origin, plus static
file serving for the web UI under ``/ui/``."""

from __future__ import annotations

import logging
import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .api import ApiRequest, Router

log = logging.getLogger("thunderctf.server")

MAX_BODY = 8 * 1024 * 1024


class EmuCloudServer:
    def __init__(self, router: Router, host: str = "127.0.0.1", port: int = 8085,
                 ui_dir: Optional[Path] = None):
        self.router = router
        self.ui_dir = ui_dir
        handler = _make_handler(router, ui_dir)
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"{host}:{port}"

    def start_background(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def _make_handler(router: Router, ui_dir: Optional[Path]):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "emucloud/0.1"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            log.debug("%s %s", self.address_string(), fmt % args)

        def _serve(self) -> None:
            if self.path == "/ui" or self.path.startswith("/ui/"):
                self._serve_static()
                return
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY:
                self.send_error(413)
                return
            body = self.rfile.read(length) if length else b""
            req = ApiRequest.from_target(
                self.command, self.path, headers=dict(self.headers.items()), body=body
            )
            resp = router.route(req)
            self.send_response(resp.status)
            self.send_header("Content-Type", resp.content_type)
            self.send_header("Content-Length", str(len(resp.body)))
            self.end_headers()
            if self.command != "HEAD":
                self.wfile.write(resp.body)

        def _serve_static(self) -> None:
            if ui_dir is None:
                self._not_found()
                return
            rel = self.path[len("/ui"):].split("?", 1)[0].lstrip("/") or "index.html"
            target = (ui_dir / rel).resolve()
            if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
                # single-page app: unknown paths fall back to the shell
                target = (ui_dir / "index.html").resolve()
                if not target.is_file():
                    self._not_found()
                    return
            content = target.read_bytes()
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(content)))
            self.end_headers()
            self.wfile.write(content)

        def _not_found(self) -> None:
            payload = b'{"error":{"code":"route_not_found","message":"no such path"}}'
            self.send_response(404)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        do_GET = _serve
        do_POST = _serve
        do_PUT = _serve
        do_DELETE = _serve
        do_HEAD = _serve

    return Handler
