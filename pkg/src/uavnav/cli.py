"""Command-line entry point wiring all pipeline stages.

Exit codes: 0 success, 1 violations or failed episodes, 2 configuration
errors (bad flags, malformed config files, missing inputs).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import instructions as instr
from . import keyframe as kf
from . import pipeline as pl
from . import segmentation as seg
from . import trajgen as tg
from .geometry import Point3
from .occupancy import grid_debug_dump, save_grid, voxelize
from .scene import load_point_cloud, load_scene_spec, synthesize_scene

log = logging.getLogger("uavnav")


def _load_config(args) -> pl.PipelineConfig:
    cfg = (pl.load_pipeline_config(args.config)
           if getattr(args, "config", None) else pl.PipelineConfig())
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None):
        overrides["vlm_mode"] = args.mode
    if getattr(args, "cache_dir", None):
        overrides["vlm_cache_dir"] = args.cache_dir
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
        cfg.validate()
    return cfg


def _bundle(args, cfg: pl.PipelineConfig) -> pl.SceneBundle:
    if getattr(args, "scene", None):
        return pl.load_scene_dir(args.scene, cfg)
    if getattr(args, "spec", None):
        return pl.build_scene_bundle(load_scene_spec(args.spec), cfg)
    raise pl.ConfigError("a scene directory (--scene) or spec (--spec) is required")


def cmd_scene_synth(args) -> int:
    spec = (load_scene_spec(args.spec) if args.spec
            else pl.demo_scene_spec(seed=args.seed or 7))
    cloud, landmarks = synthesize_scene(spec)
    pl.write_scene_dir(spec, args.out, cloud=cloud)
    print(f"wrote scene {spec.scene_id!r}: {len(cloud)} points, "
          f"{len(landmarks)} ground-truth landmarks -> {args.out}")
    return 0


def cmd_voxelize(args) -> int:
    cloud = load_point_cloud(Path(args.scene) / "cloud.txt"
                             if Path(args.scene).is_dir() else args.scene)
    grid = voxelize(cloud, args.voxel_size, args.margin)
    save_grid(grid, args.out)
    if args.debug_json:
        Path(args.debug_json).write_text(grid_debug_dump(grid), encoding="utf-8")
    print(f"voxelized {len(cloud)} points -> dims {grid.dims}, "
          f"{int(grid.occupancy.sum())} occupied cells -> {args.out}")
    return 0


def cmd_segment(args) -> int:
    cfg = _load_config(args)
    spec = load_scene_spec(Path(args.scene) / "scene.json")
    cloud = load_point_cloud(Path(args.scene) / "cloud.txt")
    bundle = pl.build_scene_bundle(spec, cfg, cloud=cloud)
    seg.save_instances(bundle.landmarks, args.out)
    print(f"extracted {len(bundle.landmarks)} landmark instances -> {args.out}")
    return 0


def cmd_trajgen(args) -> int:
    cfg = _load_config(args)
    bundle = _bundle(args, cfg)
    rng_seed = cfg.seed
    episodes = []
    for index in range(args.count):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=rng_seed, spawn_key=(index,)))
        start, goal, target = tg.sample_endpoints(
            bundle.landmarks, bundle.bev, bundle.nav_grid, cfg.trajgen, rng)
        from dataclasses import replace
        trajectory = replace(tg.astar_search(start, goal, bundle.nav_grid, cfg.trajgen),
                             target_landmark_id=target)
        episode_id = f"{bundle.scene_id}-{index:06d}"
        refs = [f"{episode_id}/frame_{k:05d}" for k in range(len(trajectory.poses))]
        episodes.append(ds.Episode(
            episode_id=episode_id, scene_id=bundle.scene_id,
            trajectory=trajectory, instruction=None, image_refs=refs,
            meta={"engine": "synthetic", "seed": rng_seed, "episode_index": index,
                  "goal": [goal.x, goal.y, goal.z],
                  "gt_length": trajectory.path_length(), "created_at": None},
        ))
    count = ds.write_episodes(episodes, args.out)
    print(f"generated {count} trajectories -> {args.out}")
    return 0


def cmd_instruct(args) -> int:
    cfg = _load_config(args)
    bundle = _bundle(args, cfg)
    vlm = cfg.make_vlm()
    episodes = ds.read_episodes(args.episodes)
    out = []
    for episode in episodes:
        visibility = kf.landmark_visibility(
            episode.trajectory.poses, bundle.landmarks, bundle.raw_grid)
        instruction = instr.build_instruction(
            episode.trajectory, bundle.captions(), vlm,
            image_refs=episode.image_refs, visibility=visibility,
            threshold=cfg.coref_threshold)
        episode.instruction = instruction
        out.append(episode)
    ds.write_episodes(out, args.out)
    print(f"instructed {len(out)} episodes -> {args.out}")
    return 0


def cmd_dataset_filter(args) -> int:
    cfg = _load_config(args)
    bundle = _bundle(args, cfg) if (args.scene or args.spec) else None
    episodes = ds.read_episodes(args.episodes)
    kept, rejected = [], []
    for episode in episodes:
        verdict = ds.filter_episode(episode, cfg.tree_height,
                                    bundle.bev if bundle else None)
        (kept if verdict.accepted else rejected).append((episode, verdict))
    ds.write_episodes([e for e, _ in kept], args.out)
    if args.rejects:
        with Path(args.rejects).open("w", encoding="utf-8") as fh:
            for episode, verdict in rejected:
                fh.write(json.dumps({"episode_id": episode.episode_id,
                                     "reason": verdict.reason}) + "\n")
    print(f"kept {len(kept)} / {len(episodes)} episodes -> {args.out}")
    return 0


def cmd_dataset_split(args) -> int:
    episodes = ds.read_episodes(args.episodes)
    assignment = json.loads(Path(args.assignment).read_text(encoding="utf-8"))
    train, seen, unseen = ds.split_dataset(episodes, assignment)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split in (train, seen, unseen):
        ds.write_episodes(split.episodes, out_dir / f"{split.name}.jsonl")
        print(f"{split.name}: {len(split.episodes)} episodes "
              f"({len(split.scene_ids)} scenes)")
    return 0


def cmd_dataset_stats(args) -> int:
    episodes = ds.read_episodes(args.episodes)
    stats = ds.compute_stats(episodes)
    if args.json:
        Path(args.json).write_text(json.dumps(stats.to_dict(), indent=1),
                                   encoding="utf-8")
    print(stats.to_text())
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    bundle = _bundle(args, cfg)
    gt = {e.episode_id: e for e in ds.read_episodes(args.episodes)}
    results = []
    missing = 0
    with Path(args.predictions).open("r", encoding="utf-8") as fh:
        predictions = [json.loads(line) for line in fh if line.strip()]
    for pred in predictions:
        episode = gt.get(pred["episode_id"])
        if episode is None:
            missing += 1
            continue
        actions = [tg.Action.from_dict(a) for a in pred["actions"]]
        result = ev.replay(episode.trajectory.start, actions, bundle.nav_grid)
        goal = episode.meta.get("goal")
        goal_point = (Point3(*goal) if goal
                      else episode.trajectory.poses[-1].position)
        gt_length = float(episode.meta.get("gt_length")
                          or episode.trajectory.path_length())
        results.append(ev.score(result, goal_point, gt_length, args.radius))
    summary = ev.aggregate(results).to_dict()
    summary["missing_predictions"] = missing
    report = json.dumps(summary, indent=1)
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    print(report)
    print(f"NE {summary['ne']:.2f} m | SR {summary['sr']:.3f} | "
          f"OSR {summary['osr']:.3f} | SPL {summary['spl']:.3f}")
    return 0 if missing == 0 else 1


def cmd_keyframe(args) -> int:
    action_docs = json.loads(Path(args.actions).read_text(encoding="utf-8"))
    actions = [tg.Action.from_dict(a) for a in action_docs]
    doc = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    window = int(doc.pop("window", kf.DEFAULT_WINDOW))
    cfg = kf.MemoryBankConfig(**doc)
    tokens_dir = Path(args.tokens)
    frames = {}
    for k in range(len(actions) + 1):
        path = tokens_dir / f"frame_{k:05d}.bin"
        if path.exists():
            frames[k] = kf.load_tokens(path, frame_index=k)
    if args.visibility:
        vis_doc = json.loads(Path(args.visibility).read_text(encoding="utf-8"))
        visibility = {int(k): set(v) for k, v in vis_doc.items()}
    else:
        visibility = {k: {-1} for k in frames}  # no map: every frame counts
    candidates = kf.select_candidates(actions, window)
    sets = kf.confirm_keyframes(
        [c for c in candidates if all(i in frames for i in c.frame_indices)],
        visibility, frames)
    bank = kf.MemoryBank()
    events: list[kf.MergeEvent] = []
    for keyframe_set in sets:
        merged = kf.merge_tokens(keyframe_set, cfg.similarity_threshold, log=events)
        kf.memory_push(bank, kf.grid_pool(merged, cfg.pooled_tokens), cfg)
    current_index = max(frames) if frames else None
    if current_index is None:
        raise pl.ConfigError(f"no token files found under {tokens_dir}")
    observation = kf.assemble_observation(bank, frames[current_index], cfg)
    kf.save_tokens(observation, args.out)
    if args.log:
        Path(args.log).write_text(json.dumps([
            {"frame_index": e.frame_index, "reference_token": e.reference_token,
             "frame_token": e.frame_token, "similarity": e.similarity}
            for e in events], indent=1), encoding="utf-8")
    print(f"assembled observation: {observation.count} tokens "
          f"({len(bank)} bank keyframes + current) -> {args.out}")
    return 0


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    bundle = _bundle(args, cfg)
    report = pl.run_generate(bundle, cfg, args.count, args.out)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=1),
                                     encoding="utf-8")
    print(json.dumps(report.to_dict(), indent=1))
    return 0 if report.ok else 1


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    bundle = _bundle(args, cfg) if (args.scene or args.spec) else None
    report = pl.run_validate(args.episodes, cfg, bundle)
    print(json.dumps(report.to_dict(), indent=1))
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavnav",
        description="Generate, validate, and evaluate aerial navigation episodes.")
    parser.add_argument("--verbose", action="store_true",
                        help="log per-stage JSON lines to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, scene=True, config=True, seed=False):
        if scene:
            p.add_argument("--scene", help="scene directory (scene.json + cloud.txt)")
            p.add_argument("--spec", help="scene spec JSON (synthesized on the fly)")
        if config:
            p.add_argument("--config", help="pipeline config JSON")
        if seed:
            p.add_argument("--seed", type=int, help="generation seed")

    p = sub.add_parser("scene", help="scene tools")
    scene_sub = p.add_subparsers(dest="scene_command", required=True)
    p_synth = scene_sub.add_parser("synth", help="synthesize a procedural scene")
    p_synth.add_argument("--spec", help="scene spec JSON (omit for the demo scene)")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_scene_synth)

    p = sub.add_parser("voxelize", help="build and export the voxel grid")
    p.add_argument("--scene", required=True, help="scene dir or point cloud file")
    p.add_argument("--voxel-size", type=float, default=1.0)
    p.add_argument("--margin", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.add_argument("--debug-json")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("segment", help="extract and caption landmark instances")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["mock", "live", "replay"])
    p.add_argument("--cache-dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("trajgen", help="sample and search trajectories")
    add_common(p, seed=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trajgen)

    p = sub.add_parser("instruct", help="generate instructions for episodes")
    add_common(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--mode", choices=["mock", "live", "replay"], default="mock")
    p.add_argument("--cache-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_instruct)

    p = sub.add_parser("dataset", help="filter / split / stats")
    dataset_sub = p.add_subparsers(dest="dataset_command", required=True)
    p_filter = dataset_sub.add_parser("filter")
    add_common(p_filter)
    p_filter.add_argument("--episodes", required=True)
    p_filter.add_argument("--out", required=True)
    p_filter.add_argument("--rejects", help="JSONL of rejected ids and reasons")
    p_filter.set_defaults(func=cmd_dataset_filter)
    p_split = dataset_sub.add_parser("split")
    p_split.add_argument("--episodes", required=True)
    p_split.add_argument("--assignment", required=True,
                         help="JSON: scene->split or split->[scenes]")
    p_split.add_argument("--out-dir", required=True)
    p_split.set_defaults(func=cmd_dataset_split)
    p_stats = dataset_sub.add_parser("stats")
    p_stats.add_argument("--episodes", required=True)
    p_stats.add_argument("--json", help="also write stats as JSON")
    p_stats.set_defaults(func=cmd_dataset_stats)

    p = sub.add_parser("eval", help="replay predictions and score them")
    add_common(p)
    p.add_argument("--episodes", required=True, help="ground-truth JSONL")
    p.add_argument("--predictions", required=True,
                   help="JSONL of {episode_id, actions}")
    p.add_argument("--radius", type=float, default=ev.SUCCESS_RADIUS)
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("keyframe", help="compress observations for one episode")
    p.add_argument("--actions", required=True, help="JSON list of actions")
    p.add_argument("--tokens", required=True, help="directory of frame_%%05d.bin")
    p.add_argument("--config", help="memory bank config JSON")
    p.add_argument("--visibility", help="JSON map frame->visible landmark ids")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="merge-event log JSON")
    p.set_defaults(func=cmd_keyframe)

    p = sub.add_parser("generate", help="end-to-end episode generation")
    add_common(p, seed=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--mode", choices=["mock", "live", "replay"])
    p.add_argument("--cache-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the generation report JSON here")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="re-check every episode invariant")
    add_common(p)
    p.add_argument("--episodes", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except pl.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ds.DatasetError, seg.CaptionError, tg.TrajGenError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
