from __future__ import annotations

import json

import numpy as np
import pytest

from uavnav.cli import main
from uavnav.dataset import read_episodes
from uavnav.keyframe import load_tokens, save_tokens, TokenMatrix
from uavnav.occupancy import load_grid
from uavnav.scene import BuildingSpec, SceneSpec, TreeSpec, scene_spec_to_dict


def small_spec() -> SceneSpec:
    def box(x, y, w, h):
        return [(x, y), (x + w, y), (x + w, y + h), (x, y + h)]

    return SceneSpec(
        scene_id="cli-scene", extent=(120.0, 120.0),
        buildings=[BuildingSpec(box(20, 20, 18, 18), 32.0, "blue glass tower"),
                   BuildingSpec(box(75, 70, 20, 16), 26.0, "red brick warehouse")],
        trees=[TreeSpec((60.0, 30.0), 8.0)], seed=3)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(scene_spec_to_dict(small_spec())))
    config_path = root / "config.json"
    config_path.write_text(json.dumps({
        "seed": 7,
        "workers": 2,
        "trajgen": {"height_range": [15.0, 35.0], "min_landmark_height": 18.0,
                    "start_distance_range": [30.0, 60.0]},
    }))
    scene_dir = root / "scene"
    assert main(["scene", "synth", "--spec", str(spec_path),
                 "--out", str(scene_dir)]) == 0
    return root


def test_scene_synth_writes_inputs(workdir):
    assert (workdir / "scene" / "scene.json").exists()
    assert (workdir / "scene" / "cloud.txt").exists()


def test_scene_synth_demo_scene(tmp_path):
    out = tmp_path / "demo"
    assert main(["scene", "synth", "--out", str(out)]) == 0
    assert (out / "cloud.txt").exists()


def test_voxelize_roundtrip(workdir):
    grid_path = workdir / "grid.bin"
    debug_path = workdir / "grid.json"
    assert main(["voxelize", "--scene", str(workdir / "scene"),
                 "--out", str(grid_path), "--debug-json", str(debug_path)]) == 0
    grid = load_grid(grid_path)
    assert grid.occupancy.any()
    assert json.loads(debug_path.read_text())["voxel_size"] == 1.0


def test_segment_writes_landmarks(workdir):
    out = workdir / "landmarks.json"
    assert main(["segment", "--scene", str(workdir / "scene"),
                 "--out", str(out)]) == 0
    docs = json.loads(out.read_text())
    assert len(docs) == 2
    assert all(d["caption"] for d in docs)


def test_trajgen_emits_trajectories(workdir):
    out = workdir / "trajs.jsonl"
    assert main(["trajgen", "--scene", str(workdir / "scene"),
                 "--config", str(workdir / "config.json"),
                 "--count", "3", "--seed", "11", "--out", str(out)]) == 0
    episodes = read_episodes(out)
    assert len(episodes) == 3
    assert all(e.instruction is None for e in episodes)


def test_instruct_fills_instructions(workdir):
    src = workdir / "trajs.jsonl"
    out = workdir / "instructed.jsonl"
    assert main(["instruct", "--scene", str(workdir / "scene"),
                 "--config", str(workdir / "config.json"),
                 "--episodes", str(src), "--mode", "mock",
                 "--out", str(out)]) == 0
    episodes = read_episodes(out)
    assert all(e.instruction is not None and e.instruction.text
               for e in episodes)


def test_generate_and_validate(workdir):
    out = workdir / "generated.jsonl"
    report_path = workdir / "report.json"
    assert main(["generate", "--scene", str(workdir / "scene"),
                 "--config", str(workdir / "config.json"),
                 "--count", "5", "--out", str(out),
                 "--report", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["accepted"] == 5
    assert main(["validate", "--scene", str(workdir / "scene"),
                 "--config", str(workdir / "config.json"),
                 "--episodes", str(out)]) == 0


def test_validate_flags_corruption(workdir, capsys):
    src = workdir / "generated.jsonl"
    bad = workdir / "corrupted.jsonl"
    lines = src.read_text().splitlines()
    doc = json.loads(lines[0])
    doc["poses"][1]["position"][0] += 5.0  # break the kinematic rollout
    lines[0] = json.dumps(doc)
    bad.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--episodes", str(bad)]) == 1
    out = json.loads(capsys.readouterr().out)
    kinds = {v["kind"] for v in out["violations"]}
    assert "kinematics" in kinds


def test_validate_flags_too_long(workdir, capsys):
    src = workdir / "generated.jsonl"
    bad = workdir / "toolong.jsonl"
    doc = json.loads(src.read_text().splitlines()[0])
    doc["actions"] = [{"kind": "turn_left", "magnitude": 30.0}] * 151 \
        + [{"kind": "stop"}]
    from uavnav.trajgen import rollout
    from uavnav.dataset import episode_from_dict, episode_to_dict
    start_doc = doc["start"]
    episode = episode_from_dict({**doc, "poses": [start_doc] * 153,
                                 "image_refs": [f"r{i}" for i in range(153)]})
    episode.trajectory.poses[:] = rollout(episode.trajectory.start,
                                          episode.trajectory.actions)
    bad.write_text(json.dumps(episode_to_dict(episode)) + "\n")
    assert main(["validate", "--episodes", str(bad)]) == 1
    out = json.loads(capsys.readouterr().out)
    assert any(v["kind"] == "filter" and v["detail"] == "too_long"
               for v in out["violations"])


def test_dataset_filter_split_stats(workdir, capsys):
    src = workdir / "generated.jsonl"
    kept = workdir / "kept.jsonl"
    assert main(["dataset", "filter", "--episodes", str(src),
                 "--out", str(kept)]) == 0
    assert len(read_episodes(kept)) == 5

    assignment = workdir / "assignment.json"
    assignment.write_text(json.dumps({"cli-scene": "train"}))
    out_dir = workdir / "splits"
    assert main(["dataset", "split", "--episodes", str(kept),
                 "--assignment", str(assignment), "--out-dir", str(out_dir)]) == 0
    assert len(read_episodes(out_dir / "train.jsonl")) == 5
    assert read_episodes(out_dir / "test_unseen.jsonl") == []

    stats_json = workdir / "stats.json"
    assert main(["dataset", "stats", "--episodes", str(kept),
                 "--json", str(stats_json)]) == 0
    doc = json.loads(stats_json.read_text())
    assert doc["episode_count"] == 5
    assert doc["vocab_size"] > 0


def test_eval_ground_truth_predictions_score_perfectly(workdir, capsys):
    src = workdir / "generated.jsonl"
    preds = workdir / "preds.jsonl"
    with preds.open("w") as fh:
        for episode in read_episodes(src):
            fh.write(json.dumps({
                "episode_id": episode.episode_id,
                "actions": [a.to_dict() for a in episode.trajectory.actions],
            }) + "\n")
    report_path = workdir / "eval.json"
    assert main(["eval", "--scene", str(workdir / "scene"),
                 "--config", str(workdir / "config.json"),
                 "--episodes", str(src), "--predictions", str(preds),
                 "--radius", "20", "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["sr"] == 1.0
    assert report["osr"] == 1.0
    assert report["spl"] > 0.9


def test_keyframe_command(workdir):
    actions = [{"kind": "forward", "magnitude": 3.0}] * 3 \
        + [{"kind": "turn_left", "magnitude": 30.0}] * 2 \
        + [{"kind": "forward", "magnitude": 6.0}] * 2 + [{"kind": "stop"}]
    actions_path = workdir / "actions.json"
    actions_path.write_text(json.dumps(actions))
    tokens_dir = workdir / "tokens"
    tokens_dir.mkdir()
    rng = np.random.default_rng(5)
    for k in range(len(actions) + 1):
        save_tokens(TokenMatrix(rng.normal(size=(16, 4)), frame_index=k),
                    tokens_dir / f"frame_{k:05d}.bin")
    cfg_path = workdir / "kf.json"
    cfg_path.write_text(json.dumps({"capacity": 2, "pooled_tokens": 1,
                                    "current_tokens": 16, "window": 1}))
    out = workdir / "obs.bin"
    log = workdir / "merges.json"
    assert main(["keyframe", "--actions", str(actions_path),
                 "--tokens", str(tokens_dir), "--config", str(cfg_path),
                 "--out", str(out), "--log", str(log)]) == 0
    obs = load_tokens(out)
    assert obs.count >= 16
    assert json.loads(log.read_text()) is not None


def test_bad_config_exits_2(workdir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"unknown_knob": 1}))
    assert main(["generate", "--scene", str(workdir / "scene"),
                 "--config", str(bad), "--count", "1",
                 "--out", str(tmp_path / "x.jsonl")]) == 2


def test_missing_scene_exits_2(tmp_path):
    assert main(["generate", "--count", "1",
                 "--out", str(tmp_path / "x.jsonl")]) == 2
