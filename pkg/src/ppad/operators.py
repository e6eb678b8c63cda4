"""Forward/reverse diffusion steps and the ping / pong / ahead / zigzag composites.

All operators are pure: reverse-family steps are functions of their inputs,
the noising steps additionally take an explicit NoiseDraw.  No operator
touches an RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConditioningError, NumericError, ShapeError, StepUnderflowError
from .rng import NoiseDraw
from .schedule import NoiseSchedule

if TYPE_CHECKING:
    from .denoiser import Denoiser
    from .semantics import Condition

ALPHA_BAR_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class LatentState:
    """A batch of points in data space tagged with its timestep."""

    x: np.ndarray   # (M, D) float64
    t: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        object.__setattr__(self, "x", x)
        if x.ndim != 2:
            raise ShapeError(f"latent must be (points, dims), got shape {x.shape}")
        if self.t < 0:
            raise StepUnderflowError(f"timestep {self.t} < 0")
        if not np.all(np.isfinite(x)):
            raise NumericError(self.t, "latent contains non-finite coordinates")


def _check_noise(x: LatentState, noise: NoiseDraw) -> None:
    if noise.eps.shape != x.x.shape:
        raise ShapeError(f"noise shape {noise.eps.shape} != latent shape {x.x.shape}")


def forward_step(x: LatentState, s: NoiseSchedule, noise: NoiseDraw) -> LatentState:
    """One noising step t-1 -> t: sqrt(alpha_t) x + sqrt(1 - alpha_t) eps."""
    t = x.t + 1
    _check_noise(x, noise)
    a = s.alpha_at(t)  # IndexError when stepping past T
    return LatentState(math.sqrt(a) * x.x + math.sqrt(1.0 - a) * noise.eps, t)


def predict_x0(x: LatentState, eps_hat: np.ndarray, s: NoiseSchedule) -> LatentState:
    """Reconstruct the clean-sample estimate (x - sqrt(1-abar) eps) / sqrt(abar)."""
    if x.t < 1:
        raise StepUnderflowError("predict_x0 needs t >= 1")
    if eps_hat.shape != x.x.shape:
        raise ShapeError(f"eps shape {eps_hat.shape} != latent shape {x.x.shape}")
    abar = s.alpha_bar_at(x.t)
    if abar < ALPHA_BAR_FLOOR:
        raise ConditioningError(f"alpha_bar({x.t}) = {abar:.3e} below {ALPHA_BAR_FLOOR}")
    x0 = (x.x - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)
    return LatentState(x0, 0)


def _reverse_update(x: np.ndarray, t: int, eps_hat: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM update via the x0 inner term."""
    abar = s.alpha_bar_at(t)
    abar_prev = s.alpha_bar_at(t - 1)
    x0 = (x - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)
    return math.sqrt(abar_prev) * x0 + math.sqrt(1.0 - abar_prev) * eps_hat


def reverse_step(x: LatentState, cond: "Condition", den: "Denoiser",
                 s: NoiseSchedule) -> LatentState:
    """One deterministic reverse step t -> t-1 under the given condition."""
    if x.t < 1:
        raise StepUnderflowError("reverse step needs t >= 1")
    eps_hat = den.predict(x, cond)
    if eps_hat.shape != x.x.shape:
        raise ShapeError(f"denoiser returned shape {eps_hat.shape}, expected {x.x.shape}")
    if not np.all(np.isfinite(eps_hat)):
        raise NumericError(x.t, "denoiser returned non-finite noise estimate")
    return LatentState(_reverse_update(x.x, x.t, eps_hat, s), x.t - 1)


def ping(x: LatentState, s: NoiseSchedule, noise: NoiseDraw) -> LatentState:
    """Back-step t-1 -> t: rescale by sqrt(abar_t/abar_{t-1}) plus fresh noise."""
    t = x.t + 1
    _check_noise(x, noise)
    abar = s.alpha_bar_at(t)  # IndexError when stepping past T
    abar_prev = s.alpha_bar_at(t - 1)
    coeff = math.sqrt(abar / abar_prev)
    return LatentState(coeff * x.x + math.sqrt(1.0 - abar) * noise.eps, t)


def pong(x_tilde: LatentState, corrected: "Condition", den: "Denoiser",
         s: NoiseSchedule) -> LatentState:
    """Forward-step t -> t-1 under the corrected condition (same contract as reverse_step)."""
    return reverse_step(x_tilde, corrected, den, s)


def pong_stochastic(x_tilde: LatentState, corrected: "Condition", den: "Denoiser",
                    s: NoiseSchedule, noise: NoiseDraw) -> LatentState:
    """Prose-variant pong: DDIM update plus sigma_t-scaled fresh noise."""
    out = reverse_step(x_tilde, corrected, den, s)
    _check_noise(out, noise)
    return LatentState(out.x + s.sigma_at(x_tilde.t) * noise.eps, out.t)


def ahead(x_tilde: LatentState, cond: "Condition", den: "Denoiser",
          s: NoiseSchedule) -> LatentState:
    """Forward-step t-1 -> t-2 under the original condition."""
    if x_tilde.t < 2:
        raise StepUnderflowError(f"ahead needs t >= 2, got {x_tilde.t}")
    return reverse_step(x_tilde, cond, den, s)


def zigzag_step(x: LatentState, cond: "Condition", den: "Denoiser",
                s: NoiseSchedule, noise: NoiseDraw) -> LatentState:
    """One back-step plus one forward-step under the original condition."""
    return pong(ping(x, s, noise), cond, den, s)
