"""Desk-scale diffusion sampling with critic-in-the-loop correction."""

from ._version import __version__
from .config import (RunConfig, SamplerConfig, ScheduleConfig, benchmark_config,
                     corrupted_condition, default_config, pentagon_world)
from .critic import (Correction, Critique, OracleCritic, RemoteCritic,
                     oracle_check, oracle_synthesize)
from .denoiser import (AnalyticDenoiser, Denoiser, GMMWorld, PerturbedDenoiser,
                       RemoteDenoiser, ZeroDenoiser, analytic_eps, perturbed_eps,
                       remote_eps)
from .lookahead import preview, preview_with_info
from .operators import (LatentState, ahead, forward_step, ping, pong,
                        predict_x0, reverse_step, zigzag_step)
from .rng import DrawSource, NoiseDraw, NoiseStream, regenerate
from .sampler import sample, sample_ppad, sample_vanilla, sample_zigzag
from .schedule import (NoiseSchedule, build_schedule, eta_coeffs, gamma_coeff,
                       lookahead_steps)
from .semantics import Condition, Prompt, RequiredComponent, compose, encode
from .trace import RunTrace, TraceRecord, latent_digest

__all__ = [name for name in dir() if not name.startswith("_")]
