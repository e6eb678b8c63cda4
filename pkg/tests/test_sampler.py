import dataclasses
import io

import numpy as np
import pytest

import ppad.sampler as sampler_mod
from ppad.analysis import alignment_metrics
from ppad.config import (RunConfig, SamplerConfig, ScheduleConfig,
                         benchmark_config, corrupted_condition, default_config,
                         pentagon_world)
from ppad.critic import Correction, Critique, FeedbackItem, oracle_synthesize
from ppad.denoiser import AnalyticDenoiser, GMMWorld, ZeroDenoiser
from ppad.errors import ShapeError
from ppad.operators import zigzag_step
from ppad.rng import NoiseDraw
from ppad.sampler import sample, sample_ppad, sample_vanilla, sample_zigzag
from ppad.schedule import build_schedule, lookahead_steps
from ppad.semantics import Condition, Prompt, RequiredComponent
from ppad.trace import RunTrace


class AlwaysConsistent:
    def check(self, sketch, prompt, step=None):
        return Critique(score=1.0)

    def synthesize(self, critique, prompt, base):
        raise AssertionError("must not be called")


class NeverConsistent:
    """Oracle synthesis on a fabricated missing-component critique."""

    def __init__(self, kappa=8.0):
        self.kappa = kappa

    def check(self, sketch, prompt, step=None):
        return Critique(score=0.0,
                        feedback=(FeedbackItem(2, "missing", 0.0, 0.3),))

    def synthesize(self, critique, prompt, base):
        return oracle_synthesize(critique, prompt, base, self.kappa)


class CountingDenoiser:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def predict(self, x, cond):
        self.calls += 1
        return self.inner.predict(x, cond)


class TestVanilla:
    def test_deterministic_digests(self):
        cfg = default_config(seed=9)
        _, t1 = sample_vanilla(cfg)
        _, t2 = sample_vanilla(cfg)
        assert t1.chain_digest() == t2.chain_digest()

    def test_trace_structure(self):
        cfg = default_config(seed=1)
        _, trace = sample_vanilla(cfg)
        assert len(trace.ops("reverse")) == cfg.schedule.T
        assert len(trace.ops("init")) == 1
        assert not trace.ops("check", "synthesize", "preview", "ping", "pong",
                             "ahead", "early-stop", "fallback")
        ts = [r.t for r in trace.ops("reverse")]
        assert ts == sorted(ts, reverse=True) and ts[-1] == 0

    def test_k1_world_mean_recovery(self):
        world = GMMWorld(means=np.array([[2.0, 0.0]]), scales=np.array([1.0]))
        base = default_config(seed=5)
        cfg = dataclasses.replace(
            base, world=world,
            prompt=Prompt(required=(RequiredComponent(0, 1.0),)),
            sampler=dataclasses.replace(base.sampler, points=1024))
        final, _ = sample_vanilla(cfg)
        assert np.linalg.norm(final.x.mean(axis=0) - world.means[0]) < 0.05


class TestEarlyStop:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_bitwise_equal_to_vanilla(self, seed):
        cfg_v = default_config(seed=seed, method="vanilla")
        cfg_p = default_config(seed=seed, method="ppad")
        final_v, trace_v = sample_vanilla(cfg_v)
        final_p, trace_p = sample_ppad(cfg_p, critic=AlwaysConsistent())
        assert np.array_equal(final_v.x, final_p.x)
        assert trace_v.chain_digest() == trace_p.chain_digest()
        assert trace_v.final_digest() == trace_p.final_digest()

    def test_single_check_then_latch(self):
        cfg = default_config(seed=3, method="ppad")
        _, trace = sample_ppad(cfg, critic=AlwaysConsistent())
        assert len(trace.ops("check")) == 1
        assert len(trace.ops("early-stop")) == 1
        assert not trace.ops("synthesize", "ping", "pong", "ahead")

    def test_latch_means_no_later_critic_records(self):
        # critic passes only at the second checkpoint
        class PassSecond:
            def __init__(self):
                self.n = 0
                self.inner = NeverConsistent()

            def check(self, sketch, prompt, step=None):
                self.n += 1
                return Critique(score=1.0) if self.n >= 2 else \
                    self.inner.check(sketch, prompt, step)

            def synthesize(self, critique, prompt, base):
                return self.inner.synthesize(critique, prompt, base)

        cfg = default_config(seed=4, method="ppad")
        _, trace = sample_ppad(cfg, critic=PassSecond())
        stop_idx = trace.records.index(trace.ops("early-stop")[0])
        later = [r for r in trace.records[stop_idx + 1:]
                 if r.op in ("check", "synthesize", "preview")]
        assert later == []


class TestCorrectionLoop:
    def test_misencoded_condition_triggers_quintuple(self):
        cfg = benchmark_config(seed=6)
        _, trace = sample_ppad(cfg)
        sc = cfg.sampler
        checks = trace.ops("check")
        assert checks and all(sc.t_lo <= r.t <= sc.t_hi for r in checks)
        quintuple_ts = set()
        for i, rec in enumerate(trace.records):
            if rec.op == "synthesize":
                following = [r.op for r in trace.records[i + 1:i + 4]]
                assert following == ["ping", "pong", "ahead"]
                quintuple_ts.add(rec.t)
        assert quintuple_ts, "no corrections fired"
        assert all(sc.t_lo <= t <= sc.t_hi for t in quintuple_ts)

    def test_interval_discipline(self):
        # every critic record's timestep lies in [t_lo, t_hi], pings included
        cfg = benchmark_config(seed=7)
        _, trace = sample_ppad(cfg)
        sc = cfg.sampler
        for rec in trace.ops("check", "synthesize", "preview", "early-stop",
                             "fallback", "ping"):
            assert sc.t_lo <= rec.t <= sc.t_hi

    def test_ping_pong_ahead_timesteps(self):
        cfg = benchmark_config(seed=8)
        _, trace = sample_ppad(cfg)
        for i, rec in enumerate(trace.records):
            if rec.op == "ping":
                pong = trace.records[i + 1]
                ahead = trace.records[i + 2]
                assert (pong.op, ahead.op) == ("pong", "ahead")
                assert pong.t == rec.t - 1 and ahead.t == rec.t - 2

    def test_exact_model_call_accounting(self):
        # interval with exactly two checkpoints, critic always corrects
        schedule_cfg = ScheduleConfig(T=50, beta_start=1e-4, beta_end=0.30)
        sc = SamplerConfig(T=50, t_hi=20, t_lo=16, delta=4, method="ppad",
                           seed=11, kappa=2.0)
        cfg = RunConfig(schedule=schedule_cfg, sampler=sc, world=pentagon_world(),
                        prompt=benchmark_config().prompt,
                        condition_override=corrupted_condition())
        schedule = build_schedule(T=50, beta_start=1e-4, beta_end=0.30)
        den = CountingDenoiser(AnalyticDenoiser(cfg.world, schedule))
        _, trace = sample_ppad(cfg, den=den, schedule=schedule,
                               critic=NeverConsistent(kappa=2.0))
        n_corr = len(trace.ops("ping"))
        assert n_corr == 2
        # checkpoints fire at x.t = t-1; k depends on snr at that t
        ks = [lookahead_steps(schedule, t - 1, sc.gamma) for t in (20, 16)]
        expected = 50 + n_corr + sum(k + 1 for k in ks)
        assert den.calls == expected

    def test_reproducible_over_random_configs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            T = int(rng.integers(12, 40))
            t_hi = int(rng.integers(6, T))
            t_lo = int(rng.integers(1, t_hi))
            cfg = RunConfig(
                schedule=ScheduleConfig(T=T, beta_start=1e-3,
                                        beta_end=float(rng.uniform(0.1, 0.4))),
                sampler=SamplerConfig(T=T, t_hi=t_hi, t_lo=t_lo,
                                      delta=int(rng.integers(1, 7)),
                                      method="ppad", seed=int(rng.integers(1000)),
                                      points=8),
                world=pentagon_world(), prompt=benchmark_config().prompt,
                condition_override=corrupted_condition())
            _, t1 = sample_ppad(cfg)
            _, t2 = sample_ppad(cfg)
            assert t1.chain_digest() == t2.chain_digest()


class TestZigzag:
    def test_zigzag_count_matches_correction_set(self):
        cfg = benchmark_config(method="zigzag", seed=2)
        _, trace = sample_zigzag(cfg)
        expected = len([t for t in cfg.sampler.correction_set() if t >= 3])
        assert len(trace.ops("zigzag")) == expected

    def test_deterministic(self):
        cfg = benchmark_config(method="zigzag", seed=3)
        assert sample_zigzag(cfg)[1].chain_digest() == \
            sample_zigzag(cfg)[1].chain_digest()

    def test_zero_noise_zero_denoiser_equals_vanilla(self, monkeypatch):
        # composition collapse: with zeroed ping noise and a zero-predicting
        # denoiser the zigzag chain is the vanilla chain
        def zero_noise_zigzag(x, cond, den, s, noise):
            silent = NoiseDraw(np.zeros_like(noise.eps), noise.source)
            return zigzag_step(x, cond, den, s, silent)

        monkeypatch.setattr(sampler_mod, "zigzag_step", zero_noise_zigzag)
        cfg_z = benchmark_config(method="zigzag", seed=4)
        cfg_v = benchmark_config(method="vanilla", seed=4)
        final_z, _ = sample_zigzag(cfg_z, den=ZeroDenoiser())
        final_v, _ = sample_vanilla(cfg_v, den=ZeroDenoiser())
        np.testing.assert_allclose(final_z.x, final_v.x, rtol=0, atol=1e-6)


class TestRobustness:
    def test_empty_support_correction_falls_back(self):
        class OverAggressive:
            def check(self, sketch, prompt, step=None):
                return Critique(score=0.0)

            def synthesize(self, critique, prompt, base):
                ones = Condition(base.weights, np.ones(base.K))
                return Correction(refined=base, omissions=ones)

        cfg = default_config(seed=5, method="ppad")
        final, trace = sample_ppad(cfg, critic=OverAggressive())
        assert final.t == 0
        assert len(trace.ops("fallback")) >= 1
        assert not trace.ops("ping")

    def test_partial_trace_flushed_on_denoiser_abort(self):
        class ExplodingDenoiser:
            def __init__(self, good_for):
                self.left = good_for

            def predict(self, x, cond):
                if self.left <= 0:
                    raise ShapeError("remote eps shape (64, 3) != latent shape (64, 2)")
                self.left -= 1
                return np.zeros_like(x.x)

        cfg = default_config(seed=6)
        sink = io.StringIO()
        with pytest.raises(ShapeError):
            sample_vanilla(cfg, den=ExplodingDenoiser(good_for=10), trace_sink=sink)
        lines = [l for l in sink.getvalue().splitlines() if l]
        assert len(lines) == 1 + 1 + 10  # header + init + flushed reverse records

    def test_prose_noise_leg_variant_differs(self):
        cfg_a = benchmark_config(seed=7)
        cfg_b = dataclasses.replace(
            cfg_a, sampler=dataclasses.replace(cfg_a.sampler, noise_leg="pong"))
        final_a, trace_a = sample_ppad(cfg_a)
        final_b, trace_b = sample_ppad(cfg_b)
        assert len(trace_b.ops("ping")) >= 1
        assert not np.array_equal(final_a.x, final_b.x)


class TestDispatchAndPersistence:
    def test_sample_dispatches_on_method(self):
        for method in ("vanilla", "zigzag", "ppad"):
            cfg = benchmark_config(method=method, seed=1)
            final, trace = sample(cfg)
            assert final.t == 0

    def test_trace_round_trip_via_jsonl(self, tmp_path):
        cfg = benchmark_config(seed=12)
        _, trace = sample_ppad(cfg)
        path = tmp_path / "run.jsonl"
        trace.to_jsonl(path)
        loaded = RunTrace.from_jsonl(path)
        assert loaded.chain_digest() == trace.chain_digest()
        assert [r.op for r in loaded.records] == [r.op for r in trace.records]

    def test_metrics_on_benchmark(self):
        cfg = benchmark_config(seed=13)
        final, _ = sample_ppad(cfg)
        metrics = alignment_metrics(final, cfg.prompt, cfg.world)
        assert set(metrics) == {"success", "coverage", "fractions"}
        assert len(metrics["fractions"]) == 5
