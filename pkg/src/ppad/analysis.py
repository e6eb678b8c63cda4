"""Theorem verifiers, loss computations, alignment metrics, ablation harness.

verify_theorem2 certifies that composing ping / pong / ahead equals the
four-coefficient decomposition exactly (an algebraic identity, so the
residual tolerance is float noise).  verify_theorem1 runs coupled ideal /
perturbed reverse chains and checks the cumulative bound, the per-step
recursion, and the coefficient cap against the schedule's SNR floor.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, benchmark_config
from .critic import component_fractions, oracle_check
from .denoiser import AnalyticDenoiser, GMMWorld, PerturbedDenoiser
from .operators import LatentState, ahead, ping, pong, reverse_step
from .rng import NoiseStream
from .sampler import sample_ppad, sample_vanilla, sample_zigzag
from .schedule import (NoiseSchedule, eta_coeffs, gamma_from_alpha_bar,
                       gamma_sum)
from .semantics import Condition, Prompt

RECURSION_SLACK = 1e-9   # float headroom on an exact-arithmetic inequality


@dataclass
class TheoremReport:
    theorem: int
    trials: int
    passed: bool
    max_residual: float | None = None
    details: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"theorem": self.theorem, "trials": self.trials, "pass": self.passed,
                "max_residual": self.max_residual, "summary": self.summary,
                "details": self.details}


def ddim_update_reference(x: np.ndarray, t: int, eps: np.ndarray,
                          s: NoiseSchedule) -> np.ndarray:
    """Independent reverse-step form: sqrt(a'/a) x + (sqrt(1-a') - sqrt(a'(1-a)/a)) eps."""
    abar = s.alpha_bar_at(t)
    abar_prev = s.alpha_bar_at(t - 1)
    coeff = math.sqrt(abar_prev / abar)
    return coeff * x + (math.sqrt(1.0 - abar_prev)
                        - math.sqrt(abar_prev * (1.0 - abar) / abar)) * eps


def _random_simplex(rng: np.random.Generator, K: int) -> Condition:
    w = rng.random(K) + 0.05
    return Condition(w / w.sum(), np.zeros(K))


def verify_theorem2(s: NoiseSchedule, world: GMMWorld, trials: int = 1000,
                    tol: float = 1e-9, seed: int = 0, points: int = 8) -> TheoremReport:
    """Composite ping->pong->ahead vs eta decomposition on random inputs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if s.T < 3:
        raise ValueError("theorem 2 needs T >= 3")
    den = AnalyticDenoiser(world, s)
    rng = np.random.Generator(np.random.Philox(key=seed))
    stream = NoiseStream(seed, stream=11)
    max_residual = 0.0
    details = []
    for trial in range(trials):
        t = int(rng.integers(3, s.T + 1))
        x_prev = LatentState(3.0 * rng.standard_normal((points, world.D)), t - 1)
        cond = _random_simplex(rng, world.K)
        corrected = _random_simplex(rng, world.K)
        draw = stream.draw(x_prev.x.shape)

        x_ping = ping(x_prev, s, draw)
        eps_pong = den.predict(x_ping, corrected)
        x_pong = pong(x_ping, corrected, den, s)
        eps_ahead = den.predict(x_pong, cond)
        x_ahead = ahead(x_pong, cond, den, s)

        eta1, eta2, eta3, eta4 = eta_coeffs(s, t)
        decomposed = (eta1 * x_prev.x + eta2 * eps_ahead + eta3 * eps_pong
                      + eta4 * draw.eps)
        residual = float(np.abs(x_ahead.x - decomposed).max())
        max_residual = max(max_residual, residual)
        if trial < 20 or residual > tol:
            details.append({"trial": trial, "t": t, "residual": residual})
    return TheoremReport(theorem=2, trials=trials, passed=max_residual <= tol,
                         max_residual=max_residual, details=details,
                         summary={"tol": tol})


def default_theorem1_world() -> GMMWorld:
    """Single unit Gaussian: the bound's hypothesis provably holds there."""
    return GMMWorld(means=np.array([[1.5, -0.5]]), scales=np.array([1.0]))


def verify_theorem1(s: NoiseSchedule, world: GMMWorld | None = None,
                    delta: float = 0.1, trials: int = 100,
                    mode: str = "constant-direction", snr_min: float | None = None,
                    seed: int = 0, points: int = 16) -> TheoremReport:
    """Coupled ideal/perturbed chains: e_0 <= delta * sum(gamma_t), recursion, gamma cap."""
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    world = world or default_theorem1_world()
    if snr_min is None:
        snr_min = s.snr_min()
    violations = [t for t in range(1, s.T + 1) if s.snr_at(t) < snr_min]
    if violations:
        raise ValueError(f"schedule violates SNR floor {snr_min} at t={violations[0]}")

    gammas = {t: gamma_from_alpha_bar(s.alpha_bar[t - 1], s.alpha_bar[t])
              for t in range(1, s.T + 1)}
    gamma_cap = math.sqrt(1.0 / snr_min)
    gamma_ok = all(g <= gamma_cap + 1e-12 for g in gammas.values())
    bound = delta * sum(gammas.values())

    cond = Condition(np.ones(world.K) / world.K, np.zeros(world.K))
    base = AnalyticDenoiser(world, s)
    details = []
    all_ok = gamma_ok
    worst_e0 = 0.0
    worst_recursion = -math.inf
    for trial in range(trials):
        stream = NoiseStream(seed + trial, stream=3)
        perturbed = PerturbedDenoiser(base, delta, mode,
                                      stream=NoiseStream(seed + trial, stream=5))
        x0_draw = stream.draw((points, world.D))
        ideal = LatentState(x0_draw.eps, s.T)
        actual = LatentState(x0_draw.eps.copy(), s.T)
        recursion_ok = True
        for t in range(s.T, 0, -1):
            e_t = np.linalg.norm(actual.x - ideal.x, axis=1)
            ideal = reverse_step(ideal, cond, base, s)
            actual = reverse_step(actual, cond, perturbed, s)
            e_next = np.linalg.norm(actual.x - ideal.x, axis=1)
            a_t = math.sqrt(s.alpha_bar[t - 1] / s.alpha_bar[t])
            slack = e_next - (a_t * e_t + gammas[t] * delta)
            worst_recursion = max(worst_recursion, float(slack.max()))
            if np.any(slack > RECURSION_SLACK):
                recursion_ok = False
        e0 = float(np.linalg.norm(actual.x - ideal.x, axis=1).max())
        worst_e0 = max(worst_e0, e0)
        ok = e0 <= bound + 1e-12 and recursion_ok
        all_ok = all_ok and ok
        if trial < 20 or not ok:
            details.append({"trial": trial, "e0": e0, "bound": bound,
                            "recursion_ok": recursion_ok})
    return TheoremReport(
        theorem=1, trials=trials, passed=all_ok, max_residual=worst_e0,
        details=details,
        summary={"delta": delta, "mode": mode, "bound": bound,
                 "gamma_sum": gamma_sum(s), "snr_min": snr_min,
                 "gamma_cap": gamma_cap, "gamma_cap_ok": gamma_ok,
                 "worst_e0": worst_e0, "worst_recursion_slack": worst_recursion})


def sft_loss(eps_true: np.ndarray, eps_pred: np.ndarray) -> float:
    """Mean squared residual norm over the batch."""
    if eps_true.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: {eps_true.shape} vs {eps_pred.shape}")
    diff = eps_pred - eps_true
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def dpo_loss(score_pos: float, score_neg: float) -> float:
    """-log softmax of the positive score; log-domain for stability."""
    if not (math.isfinite(score_pos) and math.isfinite(score_neg)):
        raise ValueError("scores must be finite")
    # -log(e^p / (e^p + e^n)) = log1p(e^(n-p))
    return float(np.log1p(np.exp(-(score_pos - score_neg))))


def alignment_metrics(final: LatentState, p: Prompt, world: GMMWorld) -> dict:
    critique = oracle_check(final, p, world)
    fractions = component_fractions(final.x, world)
    return {
        "success": int(critique.score >= 1.0),
        "coverage": {k: float(fractions[k]) for k in p.targets()},
        "fractions": fractions.tolist(),
    }


ABLATION_ROWS = (
    {"name": "none", "sck": False, "lkg": False, "ppa": False},
    {"name": "sck", "sck": True, "lkg": False, "ppa": False},
    {"name": "sck+lkg", "sck": True, "lkg": True, "ppa": False},
    {"name": "full", "sck": True, "lkg": True, "ppa": True},
)


def _ablation_run(row: dict, cfg: RunConfig) -> LatentState:
    if not row["sck"]:
        final, _ = sample_vanilla(cfg)
    else:
        final, _ = sample_ppad(cfg, use_ppa=row["ppa"], use_lookahead=row["lkg"])
    return final


def ablation_harness(base_cfg: RunConfig | None = None, runs: int = 100) -> list[dict]:
    """Mean success per module combination on the mis-conditioned benchmark."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rows = []
    for row in ABLATION_ROWS:
        successes = 0
        for seed in range(runs):
            cfg = base_cfg or benchmark_config()
            cfg = dataclasses.replace(
                cfg, sampler=dataclasses.replace(
                    cfg.sampler, seed=seed, method="ppad" if row["sck"] else "vanilla"))
            final = _ablation_run(row, cfg)
            successes += alignment_metrics(final, cfg.prompt, cfg.world)["success"]
        rows.append({**row, "runs": runs, "success_rate": successes / runs})
    return rows


def compare_methods(methods: list[str], runs: int, base_cfg: RunConfig | None = None,
                    workers: int = 1) -> list[dict]:
    """Seeded success/coverage rows per method on the benchmark config."""
    jobs = [(method, seed) for method in methods for seed in range(runs)]
    if workers > 1:
        import multiprocessing
        with multiprocessing.Pool(workers) as pool:
            rows = pool.starmap(_compare_one,
                                [(method, seed, base_cfg) for method, seed in jobs])
    else:
        rows = [_compare_one(method, seed, base_cfg) for method, seed in jobs]
    return rows


def _compare_one(method: str, seed: int, base_cfg: RunConfig | None = None) -> dict:
    cfg = base_cfg or benchmark_config()
    cfg = dataclasses.replace(
        cfg, sampler=dataclasses.replace(cfg.sampler, seed=seed, method=method))
    final, _ = {"vanilla": sample_vanilla, "zigzag": sample_zigzag,
                "ppad": sample_ppad}[method](cfg)
    metrics = alignment_metrics(final, cfg.prompt, cfg.world)
    row = {"method": method, "seed": seed, "success": metrics["success"]}
    for k, frac in enumerate(metrics["fractions"]):
        row[f"frac_{k}"] = frac
    return row
