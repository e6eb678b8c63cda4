"""Deterministic in-repo sidecar stub for contract tests and local runs.

The default behaviour is a pure function of the request so that any
conformant sidecar (the bridge in stub mode) can reproduce it byte for
byte: /denoise answers a zero noise estimate of the request's shape;
/critic answers CONSISTENT when the prompt text contains
"consistent scene" and a fixed mismatch diagnosis otherwise.

Behaviour switches (scripted replies, wrong-shape answers, connection
drops) exist on top of that so failure paths are testable; conformance
tests never rely on them.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .denoiser import canonical_json_bytes

CONSISTENT_TRIGGER = "consistent scene"

CONSISTENT_REPLY = {
    "score": 1.0,
    "diagnosis": "CONSISTENT",
    "refined": "",
    "avoid": "",
    "cond": None,
}

INCONSISTENT_REPLY = {
    "score": 0.0,
    "diagnosis": "1. Component 2 is missing.\n2. Component 0 appears in excess.",
    "refined": "a scene with all three required clusters, emphasising cluster two",
    "avoid": "overcrowding, missing clusters",
    "cond": None,
}


def stub_critic_reply(payload: dict) -> dict:
    """The deterministic /critic contract shared with the bridge's stub mode."""
    if CONSISTENT_TRIGGER in payload.get("prompt", ""):
        return CONSISTENT_REPLY
    return INCONSISTENT_REPLY


def stub_denoise_reply(payload: dict) -> dict:
    """The deterministic /denoise contract: a zero estimate of the input shape."""
    x = payload["x"]
    return {"eps": [[0.0] * len(row) for row in x]}


class StubState:
    """Shared mutable behaviour knobs plus the request log."""

    def __init__(self, critic_script=None, denoise_mode: str = "zeros",
                 max_requests: int | None = None, drop_next: int = 0,
                 default_critic_reply: dict | None = None):
        self.lock = threading.Lock()
        self.requests: list[dict] = []          # {"path", "body"} per request
        self.critic_script = list(critic_script or [])
        self.denoise_mode = denoise_mode        # zeros | wrong-shape
        self.max_requests = max_requests
        self.drop_next = drop_next
        self.default_critic_reply = default_critic_reply
        self.served = 0

    def next_critic_reply(self, payload: dict) -> dict:
        with self.lock:
            if self.critic_script:
                return self.critic_script.pop(0)
            if self.default_critic_reply is not None:
                return self.default_critic_reply
        return stub_critic_reply(payload)


class _Handler(BaseHTTPRequestHandler):
    state: StubState

    def log_message(self, fmt, *args):  # quiet
        pass

    def _reply(self, code: int, obj) -> None:
        body = canonical_json_bytes(obj)
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        state = self.state
        with state.lock:
            state.served += 1
            state.requests.append({"path": self.path, "body": raw.decode("utf-8")})
            dropped = state.max_requests is not None and state.served > state.max_requests
            if state.drop_next > 0:
                state.drop_next -= 1
                dropped = True
        if dropped:
            self.connection.close()   # simulate a mid-run sidecar death
            return
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            self._reply(400, {"error": "body is not JSON"})
            return
        if self.path == "/denoise":
            self._handle_denoise(payload)
        elif self.path == "/critic":
            self._handle_critic(payload)
        else:
            self._reply(404, {"error": f"unknown path {self.path}"})

    def _handle_denoise(self, payload: dict) -> None:
        x = payload.get("x")
        if not isinstance(x, list) or not x or not isinstance(x[0], list):
            self._reply(400, {"error": "field 'x' must be a 2-d array"})
            return
        cond = payload.get("cond")
        if not isinstance(cond, dict) or "weights" not in cond or "suppress" not in cond:
            self._reply(400, {"error": "field 'cond' must carry weights and suppress"})
            return
        if len(cond["weights"]) != len(cond["suppress"]):
            self._reply(400, {"error": "field 'cond' vectors must have equal length"})
            return
        if self.state.denoise_mode == "wrong-shape":
            self._reply(200, {"eps": [[0.0] * (len(x[0]) + 1) for _ in range(len(x))]})
        else:
            self._reply(200, stub_denoise_reply(payload))

    def _handle_critic(self, payload: dict) -> None:
        for field, kind in (("round", str), ("step", int), ("prompt", str),
                            ("image_b64", str)):
            if not isinstance(payload.get(field), kind):
                self._reply(400, {"error": f"field '{field}' missing or wrong type"})
                return
        self._reply(200, self.state.next_critic_reply(payload))


class StubServer:
    """Threaded stub with a base_url; use as a context manager in tests."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, **state_kwargs):
        self.state = StubState(**state_kwargs)
        handler = type("BoundHandler", (_Handler,), {"state": self.state})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "StubServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def serve_blocking(self) -> None:
        try:
            self._httpd.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self._httpd.server_close()

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_forever(host: str, port: int, critic_score: float | None = None) -> None:
    """Blocking stub for the CLI; optional fixed critic score override."""
    default = None
    if critic_score is not None:
        default = dict(INCONSISTENT_REPLY if critic_score < 1.0 else DEFAULT_CRITIC_REPLY)
        default["score"] = critic_score
    server = StubServer(host, port, default_critic_reply=default)
    print(f"stub sidecar listening on {server.base_url}")
    server.serve_blocking()
