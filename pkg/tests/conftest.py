"""Shared fixtures.

The `sidecar` fixture fronts every contract test with a recording proxy so
the same assertions run against the in-repo stub (default) or an external
conformant server named by PPAD_CONFORMANCE_BASE.
"""

from __future__ import annotations

import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
import requests

from ppad.config import pentagon_world
from ppad.denoiser import GMMWorld
from ppad.schedule import build_schedule
from ppad.stubserver import StubServer


@pytest.fixture(scope="session")
def t4_schedule():
    return build_schedule("linear", T=4, beta_start=0.1, beta_end=0.4)


@pytest.fixture(scope="session")
def default_schedule():
    return build_schedule()


@pytest.fixture(scope="session")
def sampling_schedule():
    return build_schedule("linear", T=50, beta_start=1e-4, beta_end=0.30)


@pytest.fixture(scope="session")
def world5():
    return pentagon_world()


@pytest.fixture(scope="session")
def world1():
    return GMMWorld(means=np.array([[2.0, 0.0]]), scales=np.array([1.0]))


class RecordingProxy:
    """Forwarding HTTP proxy that logs every request and response."""

    def __init__(self, upstream: str):
        self.upstream = upstream.rstrip("/")
        self.log: list[dict] = []
        proxy = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                try:
                    upstream_resp = requests.post(
                        proxy.upstream + self.path, data=body,
                        headers={"Content-Type": self.headers.get("Content-Type",
                                                                  "application/json")},
                        timeout=30)
                    status, payload = upstream_resp.status_code, upstream_resp.content
                except requests.RequestException:
                    self.connection.close()
                    return
                proxy.log.append({"path": self.path, "body": body.decode("utf-8"),
                                  "status": status,
                                  "response": payload.decode("utf-8", "replace")})
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def sidecar():
    """Recording proxy in front of the stub (or an external conformance target)."""
    external = os.environ.get("PPAD_CONFORMANCE_BASE")
    stub = None
    if external:
        upstream = external
    else:
        stub = StubServer().start()
        upstream = stub.base_url
    proxy = RecordingProxy(upstream).start()
    yield proxy
    proxy.stop()
    if stub is not None:
        stub.stop()
