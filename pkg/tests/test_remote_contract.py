"""Contract tests for the sidecar wire protocols.

Everything here speaks plain HTTP through the recording `sidecar` proxy,
so the same suite runs unchanged against the in-repo stub (default) or an
external server named by PPAD_CONFORMANCE_BASE (the bridge in stub mode).
"""

import json
from pathlib import Path

import numpy as np
import pytest
import requests

from ppad.config import pentagon_world
from ppad.critic import RemoteCritic, load_template, mllm_check
from ppad.denoiser import RemoteDenoiser
from ppad.errors import RemoteError
from ppad.operators import LatentState, reverse_step
from ppad.rng import NoiseStream
from ppad.schedule import build_schedule
from ppad.semantics import Condition, Prompt, RequiredComponent

GOLDEN = Path(__file__).parent / "golden"

ANALYZE_ANCHOR = "Analyze the image and identify all mismatches with the original prompt."


def make_prompt(text="a scene with three clusters"):
    return Prompt(required=(RequiredComponent(0, 0.4), RequiredComponent(1, 0.3),
                            RequiredComponent(2, 0.3)),
                  text=text)


@pytest.fixture
def world():
    return pentagon_world()


@pytest.fixture
def schedule():
    return build_schedule("linear", T=4, beta_start=0.1, beta_end=0.4)


@pytest.fixture
def sketch():
    return LatentState(NoiseStream(1).draw((12, 2)).eps, 0)


class TestCriticTemplates:
    def test_analyze_request_embeds_anchor_line(self, sidecar, world, sketch):
        critic = RemoteCritic(sidecar.base_url, world, rounds="1r")
        critic.check(sketch, make_prompt(), step=7)
        bodies = [json.loads(e["body"]) for e in sidecar.log if e["path"] == "/critic"]
        assert len(bodies) == 1
        assert ANALYZE_ANCHOR in bodies[0]["prompt"]

    def test_all_three_templates_byte_exact(self, sidecar, world, sketch):
        prompt = make_prompt()
        critique, correction = mllm_check(sketch, prompt, sidecar.base_url, "2r",
                                          world, Condition(np.full(5, 0.2), np.zeros(5)),
                                          step=9)
        assert correction is not None
        bodies = [json.loads(e["body"]) for e in sidecar.log if e["path"] == "/critic"]
        joined = "".join(b["prompt"] for b in bodies)
        diagnosis = critique.narrative
        filled = [
            load_template("analyze").format(original_prompt=prompt.text),
            load_template("refine").format(original_prompt=prompt.text,
                                           diagnosis=diagnosis),
            load_template("avoid").format(original_prompt=prompt.text,
                                          diagnosis=diagnosis),
        ]
        for text in filled:
            assert text in joined

    def test_diagnosis_threads_between_rounds(self, sidecar, world, sketch):
        mllm_check(sketch, make_prompt(), sidecar.base_url, "2r", world,
                   Condition(np.full(5, 0.2), np.zeros(5)), step=3)
        bodies = [json.loads(e["body"]) for e in sidecar.log if e["path"] == "/critic"]
        assert bodies[0]["diagnosis"] is None
        assert bodies[1]["diagnosis"] is not None and bodies[1]["diagnosis"] != ""


class TestRoundModes:
    @pytest.mark.parametrize("rounds,expected", [("1r", 1), ("2r", 2),
                                                 ("3r", 3), ("4r", 4)])
    def test_request_count_matches_mode(self, sidecar, world, sketch,
                                        rounds, expected):
        mllm_check(sketch, make_prompt(), sidecar.base_url, rounds, world,
                   Condition(np.full(5, 0.2), np.zeros(5)), step=5)
        assert len([e for e in sidecar.log if e["path"] == "/critic"]) == expected

    def test_round_field_echoes_mode(self, sidecar, world, sketch):
        mllm_check(sketch, make_prompt(), sidecar.base_url, "3r", world,
                   Condition(np.full(5, 0.2), np.zeros(5)), step=5)
        bodies = [json.loads(e["body"]) for e in sidecar.log if e["path"] == "/critic"]
        assert all(b["round"] == "3r" for b in bodies)

    def test_consistent_sentinel_early_stops(self, sidecar, world, sketch):
        # the deterministic stub answers CONSISTENT for this prompt text
        critique, correction = mllm_check(
            sketch, make_prompt("a consistent scene of clusters"),
            sidecar.base_url, "2r", world,
            Condition(np.full(5, 0.2), np.zeros(5)), step=5)
        assert critique.score >= 1.0 and correction is None
        # synthesis rounds were skipped
        assert len([e for e in sidecar.log if e["path"] == "/critic"]) == 1

    def test_sampler_early_stops_on_consistent_sentinel(self, sidecar):
        # end to end: a remote critic answering CONSISTENT collapses the
        # corrected run onto the vanilla trajectory bitwise
        import dataclasses
        from ppad.config import benchmark_config
        from ppad.sampler import sample_ppad, sample_vanilla
        cfg = benchmark_config(seed=3)
        cfg = dataclasses.replace(
            cfg, prompt=dataclasses.replace(cfg.prompt,
                                            text="a consistent scene of clusters"))
        critic = RemoteCritic(sidecar.base_url, cfg.world, rounds="1r")
        final_p, trace_p = sample_ppad(cfg, critic=critic)
        final_v, trace_v = sample_vanilla(
            dataclasses.replace(cfg, sampler=dataclasses.replace(
                cfg.sampler, method="vanilla")))
        assert trace_p.ops("early-stop")
        assert np.array_equal(final_p.x, final_v.x)
        assert trace_p.chain_digest() == trace_v.chain_digest()
        assert len([e for e in sidecar.log if e["path"] == "/critic"]) == 1


class TestDenoiseProtocol:
    def test_zero_echo_matches_closed_form(self, sidecar, schedule, world):
        den = RemoteDenoiser(sidecar.base_url, schedule)
        cond = Condition(np.full(5, 0.2), np.zeros(5))
        x = LatentState(NoiseStream(2).draw((6, 2)).eps, 3)
        out = reverse_step(x, cond, den, schedule)
        coeff = np.sqrt(schedule.alpha_bar_at(2) / schedule.alpha_bar_at(3))
        np.testing.assert_allclose(out.x, coeff * x.x, rtol=0, atol=1e-15)

    def test_request_schema_fields(self, sidecar, schedule):
        den = RemoteDenoiser(sidecar.base_url, schedule)
        cond = Condition(np.full(5, 0.2), np.zeros(5))
        x = LatentState(np.zeros((2, 2)), 3)
        den.predict(x, cond)
        body = json.loads(sidecar.log[-1]["body"])
        assert set(body) == {"t", "alpha_bar", "x", "cond"}
        assert body["t"] == 3
        assert body["alpha_bar"] == pytest.approx(schedule.alpha_bar_at(3))
        assert set(body["cond"]) == {"weights", "suppress"}

    def test_golden_denoise_round_trip(self, sidecar):
        request = (GOLDEN / "denoise_request.json").read_bytes()
        expected = (GOLDEN / "denoise_response.json").read_bytes()
        resp = requests.post(sidecar.base_url + "/denoise", data=request,
                             headers={"Content-Type": "application/json"})
        assert resp.status_code == 200
        assert resp.content == expected

    def test_golden_critic_round_trip(self, sidecar):
        request = (GOLDEN / "critic_request.json").read_bytes()
        expected = (GOLDEN / "critic_response.json").read_bytes()
        resp = requests.post(sidecar.base_url + "/critic", data=request,
                             headers={"Content-Type": "application/json"})
        assert resp.status_code == 200
        assert resp.content == expected

    def test_client_emits_golden_request_bytes(self, schedule):
        # the recorded fixture is exactly what the client serialises
        x = LatentState(np.array([[0.5, -1.0], [1.25, 0.75], [-2.0, 0.0]]), 3)
        cond = Condition(np.array([0.5, 0.25, 0.25, 0.0, 0.0]),
                         np.array([0.0, 0.0, 0.0, 1.0, 0.0]))
        den = RemoteDenoiser("http://unused", schedule)
        assert den.request_body(x, cond) == (GOLDEN / "denoise_request.json").read_bytes()


class TestValidation:
    def test_malformed_cond_is_400_with_field_name(self, sidecar):
        resp = requests.post(
            sidecar.base_url + "/denoise",
            json={"t": 1, "alpha_bar": 0.9, "x": [[0.0, 0.0]],
                  "cond": {"weights": [1.0]}})
        assert resp.status_code == 400
        assert "cond" in resp.json()["error"]

    def test_mismatched_cond_vectors_rejected(self, sidecar):
        resp = requests.post(
            sidecar.base_url + "/denoise",
            json={"t": 1, "alpha_bar": 0.9, "x": [[0.0, 0.0]],
                  "cond": {"weights": [1.0], "suppress": [0.0, 0.0]}})
        assert resp.status_code == 400
        assert "cond" in resp.json()["error"]

    def test_missing_critic_field_is_400(self, sidecar):
        resp = requests.post(
            sidecar.base_url + "/critic",
            json={"round": "1r", "prompt": "x", "image_b64": "aGk=",
                  "diagnosis": None})
        assert resp.status_code == 400
        assert "step" in resp.json()["error"]

    def test_non_json_body_is_400(self, sidecar):
        resp = requests.post(sidecar.base_url + "/denoise", data=b"not json",
                             headers={"Content-Type": "application/json"})
        assert resp.status_code == 400
