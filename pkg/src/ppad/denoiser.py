"""Noise-prediction backends.

AnalyticDenoiser is the exact conditional posterior-mean predictor for an
isotropic Gaussian mixture: for the noised marginal at level abar the
per-component likelihood is N(sqrt(abar) mu_k, (abar s_k^2 + 1 - abar) I),
responsibilities weight the per-component posterior means, and the noise
estimate is read off the reconstruction identity.

PerturbedDenoiser manufactures a model whose prediction error has exactly
a given norm; RemoteDenoiser speaks the sidecar wire protocol.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import requests
from scipy.special import logsumexp

from .errors import EmptySupportError, RemoteError, ShapeError, StepUnderflowError
from .operators import LatentState
from .rng import NoiseStream
from .schedule import NoiseSchedule
from .semantics import Condition

DEFAULT_SUPPRESSION = 1.0


class Denoiser(Protocol):
    def predict(self, x: LatentState, cond: Condition) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class GMMWorld:
    """Isotropic Gaussian mixture standing in for the data distribution."""

    means: np.ndarray    # (K, D)
    scales: np.ndarray   # (K,) per-component std

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        scales = np.atleast_1d(np.asarray(self.scales, dtype=np.float64))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        if means.shape[0] != scales.shape[0] or means.shape[0] < 1:
            raise ValueError("need one scale per component, at least one component")
        if np.any(scales <= 0):
            raise ValueError("component scales must be positive")
        if not np.all(np.isfinite(means)):
            raise ValueError("component means must be finite")

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]

    def to_json(self) -> dict:
        return {"means": self.means.tolist(), "scales": self.scales.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "GMMWorld":
        return cls(np.asarray(obj["means"], dtype=np.float64),
                   np.asarray(obj["scales"], dtype=np.float64))


def effective_weights(cond: Condition, lam: float = DEFAULT_SUPPRESSION) -> np.ndarray:
    """How the denoiser consumes a condition: clamp-subtract suppression, renormalise."""
    w = np.maximum(0.0, cond.weights - lam * cond.suppress)
    total = w.sum()
    if total <= 0:
        raise EmptySupportError("condition suppresses every component")
    return w / total


def posterior_stats(world: GMMWorld, weights: np.ndarray, x: np.ndarray, abar: float):
    """Responsibilities (M, K) and posterior mean (M, D) of x0 given a noised batch."""
    var = abar * world.scales**2 + (1.0 - abar)                    # (K,)
    diff = x[:, None, :] - math.sqrt(abar) * world.means[None]     # (M, K, D)
    sq = np.sum(diff * diff, axis=-1)                              # (M, K)
    with np.errstate(divide="ignore"):
        log_w = np.where(weights > 0, np.log(np.where(weights > 0, weights, 1.0)), -np.inf)
    log_r = log_w[None, :] - 0.5 * sq / var[None, :] - 0.5 * world.D * np.log(var)[None, :]
    log_r = log_r - logsumexp(log_r, axis=1, keepdims=True)
    resp = np.exp(log_r)                                           # (M, K)
    shrink = (world.scales**2 * math.sqrt(abar)) / var             # (K,)
    comp_means = world.means[None] + shrink[None, :, None] * diff  # (M, K, D)
    mean = np.einsum("mk,mkd->md", resp, comp_means)
    return resp, mean


def analytic_eps(world: GMMWorld, cond: Condition, x: LatentState,
                 s: NoiseSchedule, lam: float = DEFAULT_SUPPRESSION) -> np.ndarray:
    """Exact posterior-mean noise estimate for the mixture under the condition."""
    if x.t < 1:
        raise StepUnderflowError("noise estimate undefined at t=0")
    if cond.K != world.K:
        raise ShapeError(f"condition has {cond.K} weights, world has {world.K} components")
    if x.x.shape[1] != world.D:
        raise ShapeError(f"latent dim {x.x.shape[1]} != world dim {world.D}")
    weights = effective_weights(cond, lam)
    abar = s.alpha_bar_at(x.t)
    _, mean = posterior_stats(world, weights, x.x, abar)
    return (x.x - math.sqrt(abar) * mean) / math.sqrt(1.0 - abar)


class AnalyticDenoiser:
    """Ground-truth denoiser for a GMMWorld, bound to a schedule."""

    def __init__(self, world: GMMWorld, schedule: NoiseSchedule,
                 lam: float = DEFAULT_SUPPRESSION):
        self.world = world
        self.schedule = schedule
        self.lam = lam

    def predict(self, x: LatentState, cond: Condition) -> np.ndarray:
        return analytic_eps(self.world, cond, x, self.schedule, self.lam)


class ZeroDenoiser:
    """Predicts zero noise everywhere (test scaffolding and stub parity)."""

    def predict(self, x: LatentState, cond: Condition) -> np.ndarray:
        return np.zeros_like(x.x)


class PerturbedDenoiser:
    """Base prediction plus a perturbation of exactly delta per point.

    constant-direction mode uses a fixed unit vector; random-per-call draws a
    fresh unit direction per point from its own counter-based stream.
    """

    MODES = ("constant-direction", "random-per-call")

    def __init__(self, base: Denoiser, delta: float, mode: str = "constant-direction",
                 stream: NoiseStream | None = None, direction: np.ndarray | None = None):
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.base = base
        self.delta = float(delta)
        self.mode = mode
        self.stream = stream if stream is not None else NoiseStream(seed=0, stream=7)
        self.direction = direction

    def _unit_directions(self, shape) -> np.ndarray:
        if self.mode == "constant-direction":
            if self.direction is None:
                d = np.zeros(shape[1])
                d[0] = 1.0
            else:
                d = np.asarray(self.direction, dtype=np.float64)
                d = d / np.linalg.norm(d)
            return np.broadcast_to(d, shape)
        draw = self.stream.draw(shape).eps
        norms = np.linalg.norm(draw, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return draw / norms

    def predict(self, x: LatentState, cond: Condition) -> np.ndarray:
        eps = self.base.predict(x, cond)
        if self.delta == 0.0:
            return eps
        return eps + self.delta * self._unit_directions(eps.shape)


def perturbed_eps(base: Denoiser, delta: float, mode: str = "constant-direction",
                  **kwargs) -> PerturbedDenoiser:
    return PerturbedDenoiser(base, delta, mode, **kwargs)


def canonical_json_bytes(obj) -> bytes:
    """Stable byte encoding shared by clients, stub and golden fixtures."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class RemoteDenoiser:
    """Client for the sidecar /denoise protocol; retries once on transport failure."""

    def __init__(self, endpoint: str, schedule: NoiseSchedule, timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self.schedule = schedule
        self.timeout = timeout

    def request_body(self, x: LatentState, cond: Condition) -> bytes:
        payload = {
            "t": x.t,
            "alpha_bar": self.schedule.alpha_bar_at(x.t),
            "x": x.x.tolist(),
            "cond": cond.to_json(),
        }
        return canonical_json_bytes(payload)

    def predict(self, x: LatentState, cond: Condition) -> np.ndarray:
        body = self.request_body(x, cond)
        url = self.endpoint + "/denoise"
        last_exc: Exception | None = None
        for _ in range(2):
            try:
                resp = requests.post(url, data=body,
                                     headers={"Content-Type": "application/json"},
                                     timeout=self.timeout)
                break
            except requests.RequestException as exc:
                last_exc = exc
        else:
            raise RemoteError(url, x.t, f"transport failure: {last_exc}")
        if resp.status_code != 200:
            raise RemoteError(url, x.t, f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            eps = np.asarray(resp.json()["eps"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise RemoteError(url, x.t, f"bad response body: {resp.text[:200]}") from exc
        if eps.shape != x.x.shape:
            raise ShapeError(f"remote eps shape {eps.shape} != latent shape {x.x.shape}")
        return eps


def remote_eps(endpoint: str, schedule: NoiseSchedule, timeout: float = 10.0) -> RemoteDenoiser:
    return RemoteDenoiser(endpoint, schedule, timeout)
