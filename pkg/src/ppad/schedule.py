"""Noise schedules and every coefficient derived from them.

Timesteps run 1..T.  alpha_bar is stored at indices 0..T with
alpha_bar[0] = 1 so the error-bound and decomposition formulas index
without shifts.  All arrays are float64 and computed once at build time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ScheduleRangeError

DEFAULT_T = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Immutable per-timestep coefficient table.

    Invariants are established by build_schedule; the dataclass itself is a
    dumb container so tests can construct degenerate instances on purpose.
    """

    T: int
    beta: np.ndarray        # (T,), beta[i] is beta_{i+1}
    alpha: np.ndarray       # (T,)
    alpha_bar: np.ndarray   # (T+1,), alpha_bar[0] = 1
    sigma: np.ndarray       # (T,), sigma[0] = 0
    snr: np.ndarray         # (T,), snr[i] = alpha_bar[i+1]/(1-alpha_bar[i+1])

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar[t])

    def sigma_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.sigma[t - 1])

    def snr_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.snr[t - 1])

    def snr_min(self) -> float:
        return float(self.snr.min())

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [1, {self.T}]")


def build_schedule(kind: str = "linear", T: int = DEFAULT_T,
                   beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Construct a schedule; beta interpolates inclusive of both endpoints."""
    if kind != "linear":
        raise ScheduleRangeError("kind", f"unsupported schedule kind {kind!r}")
    if T < 2:
        raise ScheduleRangeError("T", f"need T >= 2, got {T}")
    if not 0.0 < beta_start:
        raise ScheduleRangeError("beta_start", f"must be > 0, got {beta_start}")
    if beta_start > beta_end:
        raise ScheduleRangeError("beta_start", "must be <= beta_end")
    if not beta_end < 1.0:
        raise ScheduleRangeError("beta_end", f"must be < 1, got {beta_end}")

    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    np.cumprod(alpha, out=alpha_bar[1:])
    # sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t); sigma_1 = 0, and the
    # ratio is guarded for fp-degenerate schedules where 1 - abar underflows
    denom = 1.0 - alpha_bar[1:]
    ratio = np.divide(1.0 - alpha_bar[:-1], denom,
                      out=np.zeros_like(denom), where=denom > 0)
    sigma = np.sqrt(beta * ratio)
    snr = np.divide(alpha_bar[1:], denom,
                    out=np.full_like(denom, np.inf), where=denom > 0)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar,
                         sigma=sigma, snr=snr)


def lookahead_steps(s: NoiseSchedule, t: int, gamma: float) -> int:
    """Preview depth: 1 when snr(t) > gamma (strict), else 2."""
    if gamma <= 0:
        raise ScheduleRangeError("gamma", f"must be > 0, got {gamma}")
    return 1 if s.snr_at(t) > gamma else 2


def gamma_from_alpha_bar(abar_prev: float, abar_cur: float) -> float:
    """Error-growth coefficient |sqrt(1-a') - sqrt(a'(1-a)/a)| for a'=abar_{t-1}, a=abar_t."""
    return abs(math.sqrt(1.0 - abar_prev) - math.sqrt(abar_prev * (1.0 - abar_cur) / abar_cur))


def gamma_coeff(s: NoiseSchedule, t: int) -> float:
    """Per-step error-growth coefficient; needs alpha_bar at t-1, so t >= 2."""
    if t < 2:
        raise IndexError(f"gamma_coeff needs t >= 2, got {t}")
    s._check_t(t)
    return gamma_from_alpha_bar(s.alpha_bar[t - 1], s.alpha_bar[t])


def gamma_sum(s: NoiseSchedule) -> float:
    """Sum of gamma_t over t = 1..T (gamma_1 uses alpha_bar[0] = 1)."""
    return float(sum(gamma_from_alpha_bar(s.alpha_bar[t - 1], s.alpha_bar[t])
                     for t in range(1, s.T + 1)))


def eta_from_alpha_bar(abar_pp: float, abar_prev: float, abar_cur: float):
    """The four decomposition scalars from (abar_{t-2}, abar_{t-1}, abar_t)."""
    eta1 = math.sqrt(abar_pp / abar_prev)
    mid = math.sqrt(abar_pp * (1.0 - abar_prev) / abar_prev)
    eta4 = math.sqrt(abar_pp * (1.0 - abar_cur) / abar_cur)
    eta2 = math.sqrt(1.0 - abar_pp) - mid
    eta3 = mid - eta4
    return eta1, eta2, eta3, eta4


def eta_coeffs(s: NoiseSchedule, t: int):
    """Decomposition coefficients (eta1..eta4); needs alpha_bar at t-2, so t >= 3."""
    if t < 3:
        raise IndexError(f"eta_coeffs needs t >= 3, got {t}")
    s._check_t(t)
    return eta_from_alpha_bar(s.alpha_bar[t - 2], s.alpha_bar[t - 1], s.alpha_bar[t])


def schedule_rows(s: NoiseSchedule):
    """Per-timestep coefficient rows for the dump-schedule CSV.

    gamma is blank below t=2 and the etas below t=3, matching the operation
    domains.
    """
    for t in range(1, s.T + 1):
        gamma = gamma_coeff(s, t) if t >= 2 else None
        etas = eta_coeffs(s, t) if t >= 3 else (None, None, None, None)
        yield {
            "t": t,
            "beta": s.beta_at(t),
            "alpha": s.alpha_at(t),
            "alpha_bar": s.alpha_bar_at(t),
            "sigma": s.sigma_at(t),
            "snr": s.snr_at(t),
            "gamma": gamma,
            "eta1": etas[0],
            "eta2": etas[1],
            "eta3": etas[2],
            "eta4": etas[3],
        }
