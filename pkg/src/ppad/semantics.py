"""Toy prompt language, the encoder, and corrected-condition composition.

A prompt asks for occupancy fractions of mixture components; a condition
is the encoded form the denoiser consumes: a weight simplex plus a
suppression vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySupportError

DEFAULT_TOLERANCE = 0.15


@dataclass(frozen=True)
class RequiredComponent:
    id: int
    fraction: float


@dataclass(frozen=True)
class Prompt:
    """What the generated point set should look like, in occupancy terms."""

    required: tuple[RequiredComponent, ...]
    forbidden: tuple[int, ...] = ()
    tolerance: float = DEFAULT_TOLERANCE
    text: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.tolerance <= 1.0:
            raise ValueError(f"tolerance must lie in [0, 1], got {self.tolerance}")
        req_ids = {r.id for r in self.required}
        if req_ids & set(self.forbidden):
            raise ValueError("required and forbidden ids overlap")
        total = sum(r.fraction for r in self.required)
        if total > 1.0 + self.tolerance:
            raise ValueError(f"target fractions sum to {total:.3f} > 1 + tolerance")
        for r in self.required:
            if not 0.0 <= r.fraction <= 1.0:
                raise ValueError(f"fraction for component {r.id} outside [0, 1]")

    def targets(self) -> dict[int, float]:
        return {r.id: r.fraction for r in self.required}

    def to_json(self) -> dict:
        return {
            "required": [{"id": r.id, "fraction": r.fraction} for r in self.required],
            "forbidden": list(self.forbidden),
            "tolerance": self.tolerance,
            "text": self.text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Prompt":
        return cls(
            required=tuple(RequiredComponent(int(r["id"]), float(r["fraction"]))
                           for r in obj["required"]),
            forbidden=tuple(int(k) for k in obj.get("forbidden", ())),
            tolerance=float(obj.get("tolerance", DEFAULT_TOLERANCE)),
            text=obj.get("text"),
        )


@dataclass(frozen=True, eq=False)
class Condition:
    """Encoded conditioning: weight simplex plus suppression mass."""

    weights: np.ndarray
    suppress: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        u = np.asarray(self.suppress, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "suppress", u)
        if w.shape != u.shape or w.ndim != 1:
            raise ValueError("weights and suppress must be 1-d vectors of equal length")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        if np.any(u < 0) or np.any(u > 1):
            raise ValueError("suppress entries must lie in [0, 1]")

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "suppress": self.suppress.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Condition":
        return cls(np.asarray(obj["weights"], dtype=np.float64),
                   np.asarray(obj["suppress"], dtype=np.float64))


def encode(p: Prompt, K: int) -> Condition:
    """Toy text encoder: target fractions become weights, forbids become suppression."""
    for r in p.required:
        if not 0 <= r.id < K:
            raise ValueError(f"required component {r.id} outside world of size {K}")
    for k in p.forbidden:
        if not 0 <= k < K:
            raise ValueError(f"forbidden component {k} outside world of size {K}")
    weights = np.zeros(K, dtype=np.float64)
    for r in p.required:
        weights[r.id] = r.fraction
    total = weights.sum()
    if total <= 0:
        raise EmptySupportError("prompt requires no component with positive fraction")
    weights /= total
    suppress = np.zeros(K, dtype=np.float64)
    for k in p.forbidden:
        suppress[k] = 1.0
    return Condition(weights, suppress)


def compose(refined: Condition, omissions: Condition, lam: float) -> Condition:
    """Merge a refined condition with omission mass.

    Weights lose lam * omission suppression (clamped at zero, renormalised);
    suppression is the elementwise max of the two vectors.
    """
    if refined.K != omissions.K:
        raise ValueError("conditions have different component counts")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    weights = np.maximum(0.0, refined.weights - lam * omissions.suppress)
    total = weights.sum()
    if total <= 0:
        raise EmptySupportError("suppression removed all weight mass")
    return Condition(weights / total, np.maximum(refined.suppress, omissions.suppress))
