"""Run configuration: schedule, world, prompt and sampler knobs in one place.

Two presets ship with the engine: `default_config` mirrors the reference
operating point (T=50, correction interval [0.2T, 0.8T], stride 5) and
`benchmark_config` is the mis-conditioned efficacy benchmark with its
calibrated knobs (stride 2, t_lo 5, boost 8) and the corrupted initial
condition that zeroes required component 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .denoiser import GMMWorld
from .semantics import Condition, Prompt, RequiredComponent

METHODS = ("vanilla", "zigzag", "ppad")
NOISE_LEGS = ("ping", "pong")


@dataclass(frozen=True)
class SamplerConfig:
    T: int = 50
    t_hi: int = 40
    t_lo: int = 10
    delta: int = 5
    gamma: float = 1.0
    tau_stop: float = 0.5
    lam: float = 1.0
    kappa: float = 16.0
    seed: int = 0
    method: str = "vanilla"
    points: int = 64
    dims: int = 2
    noise_leg: str = "ping"

    def __post_init__(self):
        if not 1 <= self.t_lo < self.t_hi <= self.T:
            raise ValueError(f"need 1 <= t_lo < t_hi <= T, got {self.t_lo}, {self.t_hi}, {self.T}")
        if self.delta < 1:
            raise ValueError(f"delta must be >= 1, got {self.delta}")
        if not 0.0 < self.tau_stop <= 1.0:
            raise ValueError(f"tau_stop must lie in (0, 1], got {self.tau_stop}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.noise_leg not in NOISE_LEGS:
            raise ValueError(f"noise_leg must be one of {NOISE_LEGS}, got {self.noise_leg!r}")

    def correction_set(self) -> set[int]:
        return set(range(self.t_hi, self.t_lo - 1, -self.delta))


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "linear"
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.30


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleConfig
    sampler: SamplerConfig
    world: GMMWorld
    prompt: Prompt
    condition_override: Condition | None = None

    def __post_init__(self):
        if self.sampler.T != self.schedule.T:
            raise ValueError(f"sampler.T ({self.sampler.T}) must equal "
                             f"schedule.T ({self.schedule.T})")
        if self.condition_override is not None and \
                self.condition_override.K != self.world.K:
            raise ValueError("condition_override length must match the world")

    def to_json(self) -> dict:
        return {
            "schedule": asdict(self.schedule),
            "sampler": asdict(self.sampler),
            "world": self.world.to_json(),
            "prompt": self.prompt.to_json(),
            "condition_override": (None if self.condition_override is None
                                   else self.condition_override.to_json()),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        base = default_config()
        sched = replace(base.schedule, **obj.get("schedule", {}))
        sampler_obj = dict(obj.get("sampler", {}))
        sampler_obj.setdefault("T", sched.T)   # keep the two step counts in lock-step
        sampler = replace(base.sampler, **sampler_obj)
        world = GMMWorld.from_json(obj["world"]) if "world" in obj else base.world
        prompt = Prompt.from_json(obj["prompt"]) if "prompt" in obj else base.prompt
        override = obj.get("condition_override")
        return cls(schedule=sched, sampler=sampler, world=world, prompt=prompt,
                   condition_override=None if override is None
                   else Condition.from_json(override))


def pentagon_world(radius: float = 4.0, scale: float = 1.0, K: int = 5) -> GMMWorld:
    angles = 2.0 * math.pi * np.arange(K) / K
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    return GMMWorld(means=means, scales=np.full(K, scale))


def benchmark_prompt() -> Prompt:
    return Prompt(
        required=(RequiredComponent(0, 0.4), RequiredComponent(1, 0.3),
                  RequiredComponent(2, 0.3)),
        forbidden=(),
        text="a scene with three point clusters at fractions 0.4, 0.3 and 0.3",
    )


def corrupted_condition(K: int = 5) -> Condition:
    """The benchmark's mis-encoded initial condition: component 2 zeroed."""
    weights = np.array([0.4, 0.3, 0.0, 0.0, 0.0])[:K]
    return Condition(weights / weights.sum(), np.zeros(K))


def default_config(**sampler_overrides) -> RunConfig:
    return RunConfig(
        schedule=ScheduleConfig(),
        sampler=SamplerConfig(**sampler_overrides),
        world=pentagon_world(),
        prompt=benchmark_prompt(),
    )


def benchmark_config(method: str = "ppad", seed: int = 0) -> RunConfig:
    return RunConfig(
        schedule=ScheduleConfig(),
        sampler=SamplerConfig(method=method, seed=seed, delta=2, t_lo=5, kappa=16.0),
        world=pentagon_world(),
        prompt=benchmark_prompt(),
        condition_override=corrupted_condition(),
    )


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_json(json.load(fh))
