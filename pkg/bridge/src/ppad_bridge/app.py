"""Sidecar server for the /denoise and /critic wire protocols.

Stub mode reproduces the engine's deterministic contract byte for byte
(canonical JSON: sorted keys, compact separators), so the engine's
contract-test suite and golden fixtures validate this server directly.
Pipeline mode relays requests to user-supplied upstream endpoints that
front real diffusion / multimodal models; all model complexity lives
behind those upstreams, the wire schema is the only coupling.
"""

from __future__ import annotations

import json
from typing import Literal

import requests as httpreq
from fastapi import FastAPI, Request, Response
from pydantic import BaseModel, ValidationError

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


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _json_response(obj, status: int = 200) -> Response:
    return Response(content=canonical_json_bytes(obj), status_code=status,
                    media_type="application/json")


def _error(status: int, message: str) -> Response:
    return _json_response({"error": message}, status)


class CondModel(BaseModel):
    weights: list[float]
    suppress: list[float]


class DenoiseRequest(BaseModel):
    t: int
    alpha_bar: float
    x: list[list[float]]
    cond: CondModel


class DenoiseResponse(BaseModel):
    eps: list[list[float]]


class CriticRequest(BaseModel):
    round: Literal["1r", "2r", "3r", "4r"]
    step: int
    prompt: str
    image_b64: str
    diagnosis: str | None = None


class CriticResponse(BaseModel):
    score: float
    diagnosis: str
    refined: str
    avoid: str
    cond: CondModel | None = None


class BridgeSettings(BaseModel):
    mode: Literal["stub", "pipeline"] = "stub"
    denoise_upstream: str | None = None
    critic_upstream: str | None = None
    upstream_timeout: float = 60.0
    api_key: str | None = None


def _first_bad_field(err: ValidationError) -> str:
    loc = err.errors()[0].get("loc") or ("body",)
    return ".".join(str(part) for part in loc)


def stub_denoise(req: DenoiseRequest) -> dict:
    return {"eps": [[0.0] * len(row) for row in req.x]}


def stub_critic(req: CriticRequest) -> dict:
    if CONSISTENT_TRIGGER in req.prompt:
        return CONSISTENT_REPLY
    return INCONSISTENT_REPLY


def create_app(settings: BridgeSettings | None = None) -> FastAPI:
    settings = settings or BridgeSettings()
    app = FastAPI(title="ppad-bridge", docs_url=None, redoc_url=None)

    def relay(upstream: str | None, path: str, body: bytes) -> Response:
        if upstream is None:
            return _error(502, f"no upstream configured for {path}")
        headers = {"Content-Type": "application/json"}
        if settings.api_key:
            headers["Authorization"] = f"Bearer {settings.api_key}"
        try:
            resp = httpreq.post(upstream.rstrip("/") + path, data=body,
                                headers=headers, timeout=settings.upstream_timeout)
        except httpreq.RequestException as exc:
            return _error(502, f"upstream failure: {exc}")
        if resp.status_code != 200:
            return _error(502, f"upstream returned {resp.status_code}: "
                               f"{resp.text[:200]}")
        return Response(content=resp.content, status_code=200,
                        media_type="application/json")

    async def parse(request: Request, model):
        raw = await request.body()
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            return None, raw, _error(400, "body is not JSON")
        try:
            return model.model_validate(payload), raw, None
        except ValidationError as exc:
            return None, raw, _error(400, f"field '{_first_bad_field(exc)}' "
                                          f"missing or invalid")

    @app.post("/denoise")
    async def denoise(request: Request):
        req, raw, err = await parse(request, DenoiseRequest)
        if err is not None:
            return err
        if len(req.cond.weights) != len(req.cond.suppress):
            return _error(400, "field 'cond' vectors must have equal length")
        if not req.x:
            return _error(400, "field 'x' must be a non-empty 2-d array")
        if settings.mode == "pipeline":
            return relay(settings.denoise_upstream, "/denoise", raw)
        return _json_response(stub_denoise(req))

    @app.post("/critic")
    async def critic(request: Request):
        req, raw, err = await parse(request, CriticRequest)
        if err is not None:
            return err
        if settings.mode == "pipeline":
            return relay(settings.critic_upstream, "/critic", raw)
        return _json_response(stub_critic(req))

    @app.get("/healthz")
    async def healthz():
        return _json_response({"mode": settings.mode, "ok": True})

    return app


def stub_app() -> FastAPI:
    """Factory for `uvicorn ppad_bridge.app:stub_app --factory`."""
    return create_app(BridgeSettings(mode="stub"))
