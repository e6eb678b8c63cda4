"""Trajectory orchestration: vanilla, zigzag, and the corrected loop.

One shared loop drives all methods.  A correction checkpoint fires after
the regular step into x_{t-1} for t in the correction set; a failed check
triggers ping / pong / ahead and consumes one extra step index; a passed
check latches early stop for the rest of the run.  Critic failures
degrade to an uncorrected step, never abort.
"""

from __future__ import annotations

import dataclasses
from typing import IO, Protocol

from ._version import __version__
from .config import RunConfig
from .critic import Correction, Critique, OracleCritic
from .denoiser import AnalyticDenoiser, Denoiser
from .errors import ContractError, EmptySupportError, RemoteError
from .lookahead import preview_with_info
from .operators import (LatentState, ahead, ping, pong, pong_stochastic,
                        predict_x0, reverse_step, zigzag_step)
from .rng import NoiseStream
from .schedule import NoiseSchedule, build_schedule
from .semantics import Condition, Prompt, compose, encode
from .trace import RunTrace, TraceRecord, latent_digest


class Critic(Protocol):
    def check(self, sketch: LatentState, prompt: Prompt,
              step: int | None = None) -> Critique: ...
    def synthesize(self, critique: Critique, prompt: Prompt,
                   base: Condition) -> Correction: ...


def _header(cfg: RunConfig) -> dict:
    return {"config": cfg.to_json(), "version": __version__}


def _chain_record(trace: RunTrace, op: str, state: LatentState,
                  stream: NoiseStream, **extra) -> None:
    trace.add(TraceRecord(t=state.t, op=op, digest=latent_digest(state.x),
                          rng_counter=stream.counter, **extra))


def _correction_snapshot(correction: Correction, corrected: Condition) -> dict:
    return {
        "refined_weights": correction.refined.weights.tolist(),
        "omission_suppress": correction.omissions.suppress.tolist(),
        "composed": corrected.to_json(),
        "narrative": list(correction.narrative),
    }


def _run_chain(cfg: RunConfig, schedule: NoiseSchedule, den: Denoiser,
               critic: Critic | None, *, use_ppa: bool, use_lookahead: bool,
               zigzag: bool, trace_sink: IO[str] | None) -> tuple[LatentState, RunTrace]:
    sc = cfg.sampler
    cond = (cfg.condition_override if cfg.condition_override is not None
            else encode(cfg.prompt, cfg.world.K))
    stream = NoiseStream(sc.seed)
    trace = RunTrace(_header(cfg), sink=trace_sink)

    x = LatentState(stream.draw((sc.points, sc.dims)).eps, schedule.T)
    _chain_record(trace, "init", x, stream)

    correction_set = cfg.sampler.correction_set()
    latched = False
    next_step_cond: Condition | None = None   # ablation path: corrected next step only
    t = schedule.T
    # any operator failure propagates; the sink has already flushed the partial trace
    while t >= 1:
        step_cond = next_step_cond if next_step_cond is not None else cond
        next_step_cond = None
        x = reverse_step(x, step_cond, den, schedule)
        _chain_record(trace, "reverse", x, stream)

        at_checkpoint = t in correction_set and not latched and x.t >= 2
        if at_checkpoint and zigzag:
            draw = stream.draw(x.x.shape)
            x = zigzag_step(x, cond, den, schedule, draw)
            _chain_record(trace, "zigzag", x, stream,
                          info={"noise_counter": draw.source.counter})
        elif at_checkpoint and critic is not None:
            outcome = _correct(cfg, schedule, den, critic, trace, stream,
                               x, cond, use_ppa=use_ppa,
                               use_lookahead=use_lookahead)
            if outcome is not None:
                x, extra_consumed, next_step_cond, latched = outcome
                if extra_consumed:
                    t -= 1
        t -= 1
    return x, trace


def _correct(cfg: RunConfig, schedule: NoiseSchedule, den: Denoiser, critic: Critic,
             trace: RunTrace, stream: NoiseStream, x: LatentState, cond: Condition,
             *, use_ppa: bool, use_lookahead: bool):
    """Run check (+ correction) at a checkpoint; returns the new loop state.

    Critic records are stamped with the checkpoint index (the correction-set
    member, x.t + 1) so they always lie inside [t_lo, t_hi].
    """
    sc = cfg.sampler
    checkpoint_t = x.t + 1
    if use_lookahead:
        result = preview_with_info(x, cond, den, schedule, sc.gamma)
        sketch, k, clamped = result.sketch, result.k, result.clamped
    else:
        # ablation: raw one-step x0 prediction, no rollout
        sketch = predict_x0(x, den.predict(x, cond), schedule)
        k, clamped = 0, False
    trace.add(TraceRecord(t=checkpoint_t, op="preview", digest=latent_digest(sketch.x),
                          rng_counter=stream.counter,
                          info={"k": k, "clamped": clamped}))

    try:
        critique = critic.check(sketch, cfg.prompt, step=checkpoint_t)
    except RemoteError as exc:
        trace.add(TraceRecord(t=checkpoint_t, op="fallback", rng_counter=stream.counter,
                              info={"reason": str(exc)}))
        return None
    trace.add(TraceRecord(t=checkpoint_t, op="check", score=critique.score,
                          rng_counter=stream.counter))

    if critique.score >= sc.tau_stop:
        trace.add(TraceRecord(t=checkpoint_t, op="early-stop", score=critique.score,
                              rng_counter=stream.counter))
        return x, False, None, True

    try:
        correction = critic.synthesize(critique, cfg.prompt, cond)
        corrected = compose(correction.refined, correction.omissions, sc.lam)
    except (RemoteError, EmptySupportError, ContractError) as exc:
        trace.add(TraceRecord(t=checkpoint_t, op="fallback", rng_counter=stream.counter,
                              info={"reason": str(exc)}))
        return None
    snapshot = _correction_snapshot(correction, corrected)
    trace.add(TraceRecord(t=checkpoint_t, op="synthesize", rng_counter=stream.counter,
                          correction=snapshot))

    if not use_ppa:
        # ablation: corrected condition applied to the next regular step only
        return x, False, corrected, False

    draw = stream.draw(x.x.shape)
    if sc.noise_leg == "ping":
        x = ping(x, schedule, draw)
        _chain_record(trace, "ping", x, stream,
                      info={"noise_counter": draw.source.counter})
        x = pong(x, corrected, den, schedule)
        _chain_record(trace, "pong", x, stream)
    else:
        # prose variant: deterministic ping, sigma_t noise on the pong leg
        zero = dataclasses.replace(draw, eps=draw.eps * 0.0)
        x = ping(x, schedule, zero)
        _chain_record(trace, "ping", x, stream)
        x = pong_stochastic(x, corrected, den, schedule, draw)
        _chain_record(trace, "pong", x, stream,
                      info={"noise_counter": draw.source.counter})
    x = ahead(x, cond, den, schedule)
    _chain_record(trace, "ahead", x, stream)
    return x, True, None, False


def _schedule_for(cfg: RunConfig) -> NoiseSchedule:
    s = cfg.schedule
    return build_schedule(s.kind, s.T, s.beta_start, s.beta_end)


def sample_vanilla(cfg: RunConfig, den: Denoiser | None = None,
                   schedule: NoiseSchedule | None = None,
                   trace_sink: IO[str] | None = None) -> tuple[LatentState, RunTrace]:
    schedule = schedule or _schedule_for(cfg)
    den = den or AnalyticDenoiser(cfg.world, schedule)
    return _run_chain(cfg, schedule, den, None, use_ppa=False, use_lookahead=True,
                      zigzag=False, trace_sink=trace_sink)


def sample_zigzag(cfg: RunConfig, den: Denoiser | None = None,
                  schedule: NoiseSchedule | None = None,
                  trace_sink: IO[str] | None = None) -> tuple[LatentState, RunTrace]:
    schedule = schedule or _schedule_for(cfg)
    den = den or AnalyticDenoiser(cfg.world, schedule)
    return _run_chain(cfg, schedule, den, None, use_ppa=False, use_lookahead=True,
                      zigzag=True, trace_sink=trace_sink)


def sample_ppad(cfg: RunConfig, den: Denoiser | None = None,
                critic: Critic | None = None,
                schedule: NoiseSchedule | None = None,
                trace_sink: IO[str] | None = None, *,
                use_ppa: bool = True,
                use_lookahead: bool = True) -> tuple[LatentState, RunTrace]:
    """Full corrected sampling; the use_* flags exist for the ablation rows."""
    schedule = schedule or _schedule_for(cfg)
    den = den or AnalyticDenoiser(cfg.world, schedule)
    critic = critic or OracleCritic(cfg.world, cfg.sampler.kappa)
    return _run_chain(cfg, schedule, den, critic, use_ppa=use_ppa,
                      use_lookahead=use_lookahead, zigzag=False,
                      trace_sink=trace_sink)


def sample(cfg: RunConfig, **kwargs) -> tuple[LatentState, RunTrace]:
    """Dispatch on cfg.sampler.method."""
    method = cfg.sampler.method
    if method == "vanilla":
        return sample_vanilla(cfg, **kwargs)
    if method == "zigzag":
        return sample_zigzag(cfg, **kwargs)
    return sample_ppad(cfg, **kwargs)
