"""Semantic consistency checking and corrective prompt synthesis.

The oracle critic judges a decoded point set against the prompt's
occupancy targets with closed tolerance intervals and synthesises a
correction from the violations.  The remote critic relays the shipped
question templates to a sidecar over the /critic protocol, in 1 to 4
rounds, and maps the reply back onto Critique / Correction.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from importlib import resources

import numpy as np
import requests

from .denoiser import GMMWorld, canonical_json_bytes
from .errors import ContractError, RemoteError, RemoteParseError
from .operators import LatentState
from .render import render_preview
from .semantics import Condition, Prompt

ROUND_MODES = ("1r", "2r", "3r", "4r")

# components of one full critic exchange; listing templates cover the last three
_COMPONENTS = ("judge", "analyze", "refine", "avoid")
_ROUND_GROUPS = {
    "1r": (("judge", "analyze", "refine", "avoid"),),
    "2r": (("judge", "analyze"), ("refine", "avoid")),
    "3r": (("judge", "analyze"), ("refine",), ("avoid",)),
    "4r": (("judge",), ("analyze",), ("refine",), ("avoid",)),
}
_TEMPLATE_FILES = {
    "judge": "consistency_judgement.txt",
    "analyze": "analyze_mismatches.txt",
    "refine": "refined_prompt.txt",
    "avoid": "omission_highlight.txt",
}


def load_template(component: str) -> str:
    """Raw template text, byte-exact as shipped."""
    name = _TEMPLATE_FILES[component]
    return resources.files("ppad.templates").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class FeedbackItem:
    component: int
    kind: str            # missing | excess | forbidden-present
    observed: float
    target: float

    def to_json(self) -> dict:
        return {"component": self.component, "kind": self.kind,
                "observed": self.observed, "target": self.target}


@dataclass(frozen=True)
class Critique:
    score: float
    feedback: tuple[FeedbackItem, ...] = ()
    narrative: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"consistency score must lie in [0, 1], got {self.score}")

    def to_json(self) -> dict:
        return {"score": self.score,
                "feedback": [f.to_json() for f in self.feedback],
                "narrative": self.narrative}


@dataclass(frozen=True)
class Correction:
    refined: Condition
    omissions: Condition
    narrative: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"refined": self.refined.to_json(),
                "omissions": self.omissions.to_json(),
                "narrative": list(self.narrative)}


def component_fractions(points: np.ndarray, world: GMMWorld) -> np.ndarray:
    """Occupancy by nearest component mean."""
    if len(points) == 0:
        return np.zeros(world.K)
    d2 = np.sum((points[:, None, :] - world.means[None]) ** 2, axis=-1)
    idx = d2.argmin(axis=1)
    return np.bincount(idx, minlength=world.K) / len(points)


def oracle_check(preview: LatentState, p: Prompt, world: GMMWorld) -> Critique:
    """Rule-based consistency check; closed tolerance intervals on both sides."""
    frac = component_fractions(preview.x, world)
    tol = p.tolerance
    feedback: list[FeedbackItem] = []
    for k, target in p.targets().items():
        obs = float(frac[k])
        if obs < target - tol:
            feedback.append(FeedbackItem(k, "missing", obs, target))
        elif obs > target + tol:
            feedback.append(FeedbackItem(k, "excess", obs, target))
    for k in p.forbidden:
        obs = float(frac[k])
        if obs > tol:
            feedback.append(FeedbackItem(k, "forbidden-present", obs, 0.0))
    score = 1.0 if not feedback else 0.0
    return Critique(score=score, feedback=tuple(feedback))


def oracle_synthesize(c: Critique, p: Prompt, base: Condition, kappa: float) -> Correction:
    """Boost missing components, suppress excess and forbidden ones."""
    if c.score >= 1.0:
        raise ContractError("synthesize called on a consistent critique; early-stop instead")
    K = base.K
    deficit = np.zeros(K)
    suppress = np.zeros(K)
    for item in c.feedback:
        if item.kind == "missing":
            deficit[item.component] = max(0.0, item.target - item.observed)
        else:
            suppress[item.component] = min(1.0, item.observed - item.target)
    weights = base.weights + kappa * deficit
    refined = Condition(weights / weights.sum(), base.suppress.copy())
    omissions = Condition(base.weights.copy(), suppress)
    return Correction(refined=refined, omissions=omissions)


class OracleCritic:
    """check/synthesize pair bound to a world and a boost rate."""

    def __init__(self, world: GMMWorld, kappa: float):
        self.world = world
        self.kappa = kappa

    def check(self, sketch: LatentState, prompt: Prompt, step: int | None = None) -> Critique:
        return oracle_check(sketch, prompt, self.world)

    def synthesize(self, critique: Critique, prompt: Prompt, base: Condition) -> Correction:
        return oracle_synthesize(critique, prompt, base, self.kappa)


def _fill(component: str, original_prompt: str, diagnosis: str) -> str:
    text = load_template(component)
    if component in ("refine", "avoid"):
        return text.format(original_prompt=original_prompt, diagnosis=diagnosis)
    return text.format(original_prompt=original_prompt)


@dataclass
class _RoundReply:
    score: float | None
    diagnosis: str
    refined: str
    avoid: str
    cond: dict | None


class RemoteCritic:
    """Client for the sidecar /critic protocol.

    `check` issues the rounds containing the judgement/analysis components;
    `synthesize` issues the remaining rounds (skipped entirely when the
    trajectory early-stops, which is the cost saving of multi-round modes).
    """

    def __init__(self, endpoint: str, world: GMMWorld, rounds: str = "1r",
                 raster_size: int = 256, timeout: float = 30.0):
        if rounds not in ROUND_MODES:
            raise ValueError(f"rounds must be one of {ROUND_MODES}, got {rounds!r}")
        self.endpoint = endpoint.rstrip("/")
        self.world = world
        self.rounds = rounds
        self.raster_size = raster_size
        self.timeout = timeout
        self._pending: dict | None = None

    # -- wire plumbing -------------------------------------------------
    def _post(self, payload: dict, step: int | None) -> _RoundReply:
        url = self.endpoint + "/critic"
        body = canonical_json_bytes(payload)
        try:
            resp = requests.post(url, data=body,
                                 headers={"Content-Type": "application/json"},
                                 timeout=self.timeout)
        except requests.RequestException as exc:
            raise RemoteError(url, step, f"transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteError(url, step, f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            obj = resp.json()
            return _RoundReply(
                score=None if obj.get("score") is None else float(obj["score"]),
                diagnosis=str(obj.get("diagnosis", "")),
                refined=str(obj.get("refined", "")),
                avoid=str(obj.get("avoid", "")),
                cond=obj.get("cond"),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise RemoteParseError(url, step, f"unparseable response: {resp.text[:200]}") from exc

    def _issue_round(self, group: tuple[str, ...], prompt_text: str, image_b64: str,
                     diagnosis: str | None, step: int) -> _RoundReply:
        question = "".join(_fill(c, prompt_text, diagnosis or "") for c in group)
        payload = {
            "round": self.rounds,
            "step": step,
            "prompt": question,
            "image_b64": image_b64,
            "diagnosis": diagnosis,
        }
        return self._post(payload, step)

    # -- critic protocol ------------------------------------------------
    def check(self, sketch: LatentState, prompt: Prompt, step: int | None = None) -> Critique:
        if not prompt.text:
            raise ValueError("remote critic needs a free-text prompt")
        png = render_preview(sketch, self.world, self.raster_size)
        image_b64 = base64.b64encode(png).decode("ascii")
        step = -1 if step is None else step
        groups = _ROUND_GROUPS[self.rounds]
        check_groups = [g for g in groups if "judge" in g or "analyze" in g]
        later_groups = [g for g in groups if g not in check_groups]

        score: float | None = None
        diagnosis = ""
        refined_text = ""
        avoid_text = ""
        cond = None
        for group in check_groups:
            reply = self._issue_round(group, prompt.text, image_b64,
                                      diagnosis or None, step)
            if "judge" in group and reply.score is not None:
                score = reply.score
            if "analyze" in group:
                diagnosis = reply.diagnosis or diagnosis
            if "refine" in group:
                refined_text = reply.refined
            if "avoid" in group:
                avoid_text = reply.avoid
            if reply.cond is not None:
                cond = reply.cond
            if reply.diagnosis.strip() == "CONSISTENT":
                score = 1.0
        if score is None:
            raise RemoteParseError(self.endpoint + "/critic", step,
                                   "no consistency score in any reply")
        score = min(1.0, max(0.0, score))  # sidecar scores clamp to [0, 1]
        self._pending = {
            "image_b64": image_b64, "diagnosis": diagnosis, "step": step,
            "prompt": prompt.text, "later": later_groups,
            "refined": refined_text, "avoid": avoid_text, "cond": cond,
        }
        return Critique(score=score, narrative=diagnosis or None)

    def synthesize(self, critique: Critique, prompt: Prompt, base: Condition) -> Correction:
        if critique.score >= 1.0:
            raise ContractError("synthesize called on a consistent critique")
        if self._pending is None:
            raise ContractError("synthesize called before check")
        pend = self._pending
        self._pending = None
        refined_text, avoid_text, cond = pend["refined"], pend["avoid"], pend["cond"]
        diagnosis = pend["diagnosis"]
        for group in pend["later"]:
            reply = self._issue_round(group, pend["prompt"], pend["image_b64"],
                                      diagnosis or None, pend["step"])
            if "refine" in group:
                refined_text = reply.refined
            if "avoid" in group:
                avoid_text = reply.avoid
            if reply.cond is not None:
                cond = reply.cond
        if cond is not None:
            refined = Condition.from_json({"weights": cond["weights"],
                                           "suppress": [0.0] * len(cond["weights"])})
            omissions = Condition(base.weights.copy(),
                                  np.asarray(cond["suppress"], dtype=np.float64))
        else:
            # no structured mapping from free text back to mixture weights
            refined = base
            omissions = Condition(base.weights.copy(), np.zeros(base.K))
        return Correction(refined=refined, omissions=omissions,
                          narrative=(refined_text, avoid_text))


def mllm_check(preview_image: LatentState, p: Prompt, endpoint: str, rounds: str,
               world: GMMWorld, base: Condition, step: int = 0,
               raster_size: int = 256, timeout: float = 30.0):
    """Full check + synthesize exchange; returns (Critique, Correction | None)."""
    critic = RemoteCritic(endpoint, world, rounds=rounds,
                          raster_size=raster_size, timeout=timeout)
    critique = critic.check(preview_image, p, step=step)
    if critique.score >= 1.0:
        return critique, None
    return critique, critic.synthesize(critique, p, base)
