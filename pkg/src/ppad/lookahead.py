"""SNR-gated preview rollout: the sketch the critic inspects.

The rollout is fully deterministic and consumes no randomness; this is
what makes early stopping bitwise equivalent to never having previewed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .denoiser import Denoiser
from .operators import LatentState, predict_x0, reverse_step
from .schedule import NoiseSchedule, lookahead_steps
from .semantics import Condition


@dataclass(frozen=True)
class PreviewResult:
    sketch: LatentState
    k: int
    clamped: bool


def preview_with_info(x: LatentState, cond: Condition, den: Denoiser,
                      s: NoiseSchedule, gamma: float) -> PreviewResult:
    """k reverse steps under the original condition, then an x0 prediction."""
    if x.t < 2:
        raise ValueError(f"preview needs t >= 2, got {x.t}")
    k = lookahead_steps(s, x.t, gamma)
    clamped = x.t - k < 1
    if clamped:
        k = x.t - 1
    cur = x
    for _ in range(k):
        cur = reverse_step(cur, cond, den, s)
    sketch = predict_x0(cur, den.predict(cur, cond), s)
    return PreviewResult(sketch=sketch, k=k, clamped=clamped)


def preview(x: LatentState, cond: Condition, den: Denoiser,
            s: NoiseSchedule, gamma: float) -> LatentState:
    return preview_with_info(x, cond, den, s, gamma).sketch
