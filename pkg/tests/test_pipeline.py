from __future__ import annotations

import json
import time
from dataclasses import replace

import pytest

from conftest import desk_trajgen_config
from uavnav import pipeline as pl
from uavnav.dataset import read_episodes
from uavnav.vlm import API_KEY_ENV, ENDPOINT_ENV


class TestPipelineConfig:
    def test_from_dict_with_nested_sections(self):
        cfg = pl.pipeline_config_from_dict({
            "seed": 3, "workers": 2,
            "trajgen": {"height_range": [10.0, 20.0],
                        "start_distance_range": [30.0, 50.0]},
            "vlm": {"mode": "mock", "model": "anything"},
        })
        assert cfg.seed == 3
        assert cfg.trajgen.height_range == (10.0, 20.0)
        assert cfg.vlm_model == "anything"

    def test_unknown_keys_rejected(self):
        with pytest.raises(pl.ConfigError, match="unknown"):
            pl.pipeline_config_from_dict({"velocity": 9})

    def test_invalid_nested_values_rejected(self):
        with pytest.raises(pl.ConfigError):
            pl.pipeline_config_from_dict(
                {"trajgen": {"start_distance_range": [50.0, 30.0]}})

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 11}))
        assert pl.load_pipeline_config(path).seed == 11

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(pl.ConfigError):
            pl.load_pipeline_config(tmp_path / "nope.json")

    def test_env_overrides_vlm_secrets(self, monkeypatch):
        monkeypatch.setenv(ENDPOINT_ENV, "http://env-endpoint")
        monkeypatch.setenv(API_KEY_ENV, "env-key")
        cfg = pl.PipelineConfig(vlm_mode="live", vlm_endpoint="http://from-config")
        vlm = cfg.make_vlm()
        assert vlm.endpoint == "http://env-endpoint"
        assert vlm.api_key == "env-key"


class TestRunGenerate:
    def test_count_zero_writes_empty_dataset(self, demo_bundle, desk_cfg,
                                             tmp_path):
        out = tmp_path / "none.jsonl"
        report = pl.run_generate(demo_bundle, desk_cfg, 0, out)
        assert report.ok
        assert report.accepted == 0
        assert read_episodes(out) == []

    def test_byte_identical_across_worker_counts(self, demo_bundle, desk_cfg,
                                                 tmp_path):
        single = replace(desk_cfg, workers=1)
        many = replace(desk_cfg, workers=3)
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        pl.run_generate(demo_bundle, single, 12, a)
        pl.run_generate(demo_bundle, many, 12, b)
        assert a.read_bytes() == b.read_bytes()

    def test_throughput_smoke_with_more_workers(self, demo_bundle, desk_cfg,
                                                tmp_path):
        # CPython's GIL caps real scaling for this CPU-bound work; the smoke
        # check guards that fan-out at least does not collapse throughput.
        def rate(workers: int) -> float:
            cfg = replace(desk_cfg, workers=workers)
            started = time.monotonic()
            pl.run_generate(demo_bundle, cfg, 16, tmp_path / f"w{workers}.jsonl")
            return 16 / (time.monotonic() - started)

        assert rate(4) >= 0.5 * rate(1)

    def test_retry_budget_exhaustion_gives_partial_output(self, demo_bundle,
                                                          desk_cfg, tmp_path):
        # Start ring far outside the scene: every sample attempt fails.
        impossible = replace(
            desk_cfg,
            trajgen=desk_trajgen_config(start_distance_range=(2000.0, 2100.0),
                                        max_sample_attempts=3))
        out = tmp_path / "partial.jsonl"
        report = pl.run_generate(demo_bundle, impossible, 4, out)
        assert not report.ok
        assert report.failed_episodes == 4
        assert report.sampling_failures > 0
        assert read_episodes(out) == []

    def test_report_shape(self, demo_bundle, desk_cfg, tmp_path):
        report = pl.run_generate(demo_bundle, desk_cfg, 3,
                                 tmp_path / "r.jsonl")
        doc = report.to_dict()
        assert set(doc) == {"requested", "accepted", "failed_episodes",
                            "rejections", "sampling_failures",
                            "search_failures", "wall_time_s"}
        assert doc["requested"] == 3


class TestRunValidate:
    def test_fresh_output_validates_for_multiple_seeds(self, demo_bundle,
                                                       desk_cfg, tmp_path):
        for seed in (1, 2):
            cfg = replace(desk_cfg, seed=seed)
            out = tmp_path / f"s{seed}.jsonl"
            report = pl.run_generate(demo_bundle, cfg, 8, out)
            assert report.ok
            validation = pl.run_validate(out, cfg, demo_bundle)
            assert validation.ok, validation.to_dict()
            assert validation.episodes_checked == 8

    def test_goal_violation_detected(self, demo_bundle, desk_cfg, tmp_path):
        out = tmp_path / "g.jsonl"
        pl.run_generate(demo_bundle, desk_cfg, 1, out)
        doc = json.loads(out.read_text().splitlines()[0])
        doc["meta"]["goal"] = [0.0, 0.0, 0.0]
        bad = tmp_path / "bad.jsonl"
        bad.write_text(json.dumps(doc) + "\n")
        report = pl.run_validate(bad, desk_cfg, demo_bundle)
        assert any(v.kind == "goal" for v in report.violations)

    def test_schema_version_checked(self, demo_bundle, desk_cfg, tmp_path):
        out = tmp_path / "v.jsonl"
        pl.run_generate(demo_bundle, desk_cfg, 1, out)
        doc = json.loads(out.read_text().splitlines()[0])
        doc["schema_version"] = 999
        bad = tmp_path / "badv.jsonl"
        bad.write_text(json.dumps(doc) + "\n")
        report = pl.run_validate(bad, desk_cfg, demo_bundle)
        assert any(v.kind == "schema" for v in report.violations)


class TestSceneBundle:
    def test_round_trip_through_scene_dir(self, desk_cfg, tmp_path):
        spec = pl.demo_scene_spec(seed=5, scene_id="rt")
        scene_dir = pl.write_scene_dir(spec, tmp_path / "scene")
        bundle = pl.load_scene_dir(scene_dir, desk_cfg)
        assert bundle.scene_id == "rt"
        assert len(bundle.landmarks) == 6
        assert all(lm.caption is not None for lm in bundle.landmarks)

    def test_captions_reflect_ground_truth_labels(self, demo_bundle):
        colors = {lm.caption.color for lm in demo_bundle.landmarks}
        assert {"blue", "red", "gray", "beige", "green", "white"} == colors
