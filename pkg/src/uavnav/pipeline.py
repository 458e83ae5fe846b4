"""End-to-end wiring: scene -> occupancy -> segmentation -> trajectories
-> instructions -> episodes, plus dataset validation.

One JSON config document reproduces a whole run; per-episode RNG streams
are derived from (seed, episode index) so results do not depend on
worker scheduling, and generated files are byte-identical across runs
for a fixed seed.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import dataset as ds
from . import instructions as instr
from . import segmentation as seg
from . import trajgen as tg
from .geometry import Point3
from .keyframe import landmark_visibility
from .occupancy import BevGrid, VoxelGrid, bev_project, mark_vegetation, segment_free, voxelize
from .scene import (PointCloud, SceneSpec, load_point_cloud, load_scene_spec,
                    save_point_cloud, scene_spec_to_dict, synthesize_scene)
from .vlm import VlmClient

log = logging.getLogger("uavnav")

RETRY_BUDGET_FACTOR = 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    voxel_size: float = 1.0
    margin: float = 2.0
    bev_min_height: float = 2.0  # ignore terrain-surface voxels in the BEV
    min_area: float = seg.DEFAULT_MIN_AREA
    tree_height: float = ds.DEFAULT_TREE_HEIGHT
    segments: int = 1
    workers: int = 4
    trajgen: tg.TrajGenConfig = field(default_factory=tg.TrajGenConfig)
    vlm_mode: str = "mock"
    vlm_endpoint: str = ""
    vlm_model: str = "gpt-4o"
    vlm_cache_dir: str | None = None
    coref_threshold: float = instr.DEFAULT_SIMILARITY_THRESHOLD
    stamp_outputs: bool = False  # real timestamps break byte-identical runs
    schema_version: int = ds.SCHEMA_VERSION

    def validate(self) -> None:
        if self.voxel_size <= 0 or self.margin < 0:
            raise ConfigError("voxel_size must be positive and margin non-negative")
        if self.segments < 1:
            raise ConfigError("segments must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.trajgen.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def make_vlm(self) -> VlmClient:
        """Build the client; endpoint and key env vars override the config,
        so secrets stay out of the JSON document."""
        from .vlm import API_KEY_ENV, ENDPOINT_ENV

        cache = Path(self.vlm_cache_dir) if self.vlm_cache_dir else None
        return VlmClient(
            mode=self.vlm_mode,
            endpoint=os.environ.get(ENDPOINT_ENV, self.vlm_endpoint),
            api_key=os.environ.get(API_KEY_ENV, ""),
            model=self.vlm_model, cache_dir=cache)


def pipeline_config_from_dict(doc: Mapping) -> PipelineConfig:
    doc = dict(doc)
    trajgen_doc = doc.pop("trajgen", {})
    vlm_doc = doc.pop("vlm", {})
    known = {f.name for f in PipelineConfig.__dataclass_fields__.values()}
    unknown = set(doc) - known - {"schema_version"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        tg_cfg = tg.TrajGenConfig(**{
            k: tuple(v) if isinstance(v, list) else v for k, v in trajgen_doc.items()
        })
        cfg = PipelineConfig(
            trajgen=tg_cfg,
            vlm_mode=vlm_doc.get("mode", "mock"),
            vlm_endpoint=vlm_doc.get("endpoint", ""),
            vlm_model=vlm_doc.get("model", "gpt-4o"),
            vlm_cache_dir=vlm_doc.get("cache_dir"),
            **doc,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad pipeline config: {exc}") from exc
    cfg.validate()
    return cfg


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return pipeline_config_from_dict(doc)


@dataclass
class SceneBundle:
    """Everything derived from one scene, shared immutably by workers."""

    spec: SceneSpec
    cloud: PointCloud
    nav_grid: VoxelGrid  # margin-inflated, for planning and replay
    raw_grid: VoxelGrid  # uninflated, for segmentation and visibility
    bev: BevGrid
    landmarks: list[seg.LandmarkInstance]

    @property
    def scene_id(self) -> str:
        return self.spec.scene_id

    def captions(self) -> dict[int, dict[str, str]]:
        return {lm.id: lm.caption.as_dict() for lm in self.landmarks
                if lm.caption is not None}


def _match_label(inst: seg.LandmarkInstance, spec: SceneSpec) -> str | None:
    """Ground-truth label for an extracted instance, by footprint centroid."""
    from .geometry import point_in_polygon

    for b in spec.buildings:
        if point_in_polygon(inst.centroid, b.footprint):
            return b.label
    best, best_d = None, math.inf
    for b in spec.buildings:
        cx = sum(v[0] for v in b.footprint) / len(b.footprint)
        cy = sum(v[1] for v in b.footprint) / len(b.footprint)
        d = math.hypot(cx - inst.centroid[0], cy - inst.centroid[1])
        if d < best_d:
            best, best_d = b.label, d
    return best


def build_scene_bundle(spec: SceneSpec, cfg: PipelineConfig,
                       vlm: VlmClient | None = None,
                       cloud: PointCloud | None = None,
                       landmarks: list[seg.LandmarkInstance] | None = None,
                       ) -> SceneBundle:
    """Synthesize (or reuse) the cloud, build both grids, segment, caption."""
    cfg.validate()
    if cloud is None:
        cloud, _ = synthesize_scene(spec)
    nav_grid = voxelize(cloud, cfg.voxel_size, cfg.margin)
    raw_grid = voxelize(cloud, cfg.voxel_size, 0.0)
    bev = bev_project(raw_grid, min_height=cfg.bev_min_height)
    if spec.trees:
        bev = mark_vegetation(bev, [t.position for t in spec.trees],
                              radius=max(t.canopy_radius for t in spec.trees))
    if landmarks is None:
        landmarks = seg.extract_instances(bev, cfg.min_area)
        vlm = vlm or cfg.make_vlm()
        captioned = []
        for inst in landmarks:
            refs = [f"{spec.scene_id}/landmark_{inst.id:03d}/view_{k}" for k in range(3)]
            captioned.append(seg.caption_instance(
                inst, refs, vlm, hint_label=_match_label(inst, spec)))
        landmarks = captioned
    return SceneBundle(spec=spec, cloud=cloud, nav_grid=nav_grid,
                       raw_grid=raw_grid, bev=bev, landmarks=landmarks)


def load_scene_dir(scene_dir: str | Path, cfg: PipelineConfig,
                   vlm: VlmClient | None = None) -> SceneBundle:
    """Load a scene directory: scene.json, cloud.txt, optional landmarks.json."""
    scene_dir = Path(scene_dir)
    spec_path = scene_dir / "scene.json"
    if not spec_path.exists():
        raise ConfigError(f"{scene_dir} has no scene.json")
    spec = load_scene_spec(spec_path)
    cloud_path = scene_dir / "cloud.txt"
    cloud = load_point_cloud(cloud_path) if cloud_path.exists() else None
    lm_path = scene_dir / "landmarks.json"
    landmarks = seg.load_instances(lm_path) if lm_path.exists() else None
    return build_scene_bundle(spec, cfg, vlm=vlm, cloud=cloud, landmarks=landmarks)


def write_scene_dir(spec: SceneSpec, out_dir: str | Path,
                    cloud: PointCloud | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cloud is None:
        cloud, _ = synthesize_scene(spec)
    (out_dir / "scene.json").write_text(
        json.dumps(scene_spec_to_dict(spec), indent=1), encoding="utf-8")
    save_point_cloud(cloud, out_dir / "cloud.txt")
    return out_dir


def demo_scene_spec(seed: int = 7, scene_id: str = "demo") -> SceneSpec:
    """A compact mixed-height scene used by tests, docs, and quickstarts."""
    from .scene import BuildingSpec, TreeSpec

    def box(x: float, y: float, w: float, h: float) -> list[tuple[float, float]]:
        return [(x, y), (x + w, y), (x + w, y + h), (x, y + h)]

    return SceneSpec(
        scene_id=scene_id,
        extent=(240.0, 240.0),
        buildings=[
            BuildingSpec(box(30, 30, 24, 24), 48.0, "blue glass tower"),
            BuildingSpec(box(150, 40, 36, 20), 30.0, "red brick warehouse"),
            BuildingSpec(box(60, 150, 20, 30), 60.0, "gray concrete skyscraper"),
            BuildingSpec(box(170, 160, 26, 26), 24.0, "beige office building"),
            BuildingSpec(box(110, 95, 18, 18), 36.0, "green copper dome"),
            BuildingSpec(box(25, 200, 30, 14), 12.0, "white storage hall"),
        ],
        trees=[TreeSpec((100.0, 40.0), 10.0), TreeSpec((210.0, 110.0), 12.0),
               TreeSpec((40.0, 110.0), 9.0)],
        seed=seed,
    )


@dataclass
class GenerationReport:
    requested: int
    accepted: int
    failed_episodes: int
    rejections: dict[str, int]
    sampling_failures: int
    search_failures: int
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "requested": self.requested,
            "accepted": self.accepted,
            "failed_episodes": self.failed_episodes,
            "rejections": dict(sorted(self.rejections.items())),
            "sampling_failures": self.sampling_failures,
            "search_failures": self.search_failures,
            "wall_time_s": round(self.wall_time_s, 3),
        }

    @property
    def ok(self) -> bool:
        return self.failed_episodes == 0


def _episode_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(index,)))


@dataclass
class _EpisodeOutcome:
    episode: ds.Episode | None
    rejections: list[str]
    sampling_failures: int = 0
    search_failures: int = 0


def generate_episode(bundle: SceneBundle, cfg: PipelineConfig, vlm: VlmClient,
                     index: int, attempts: int = RETRY_BUDGET_FACTOR,
                     ) -> _EpisodeOutcome:
    """Sample, search, narrate, and filter one episode; retry within budget."""
    rng = _episode_rng(cfg.seed, index)
    outcome = _EpisodeOutcome(episode=None, rejections=[])
    episode_id = f"{bundle.scene_id}-{index:06d}"
    for _ in range(attempts):
        try:
            if cfg.segments == 1:
                start, goal, target = tg.sample_endpoints(
                    bundle.landmarks, bundle.bev, bundle.nav_grid, cfg.trajgen, rng)
                trajectory = replace(
                    tg.astar_search(start, goal, bundle.nav_grid, cfg.trajgen),
                    target_landmark_id=target)
            else:
                trajectory = tg.chain_trajectories(
                    cfg.segments, bundle.landmarks, bundle.bev, bundle.nav_grid,
                    cfg.trajgen, rng)
                goal = trajectory.poses[-1].position
        except tg.SamplingError:
            outcome.sampling_failures += 1
            continue
        except tg.NoPathError:
            outcome.search_failures += 1
            continue
        image_refs = [f"{episode_id}/frame_{k:05d}"
                      for k in range(len(trajectory.poses))]
        visibility = landmark_visibility(trajectory.poses, bundle.landmarks,
                                         bundle.raw_grid)
        instruction = instr.build_instruction(
            trajectory, bundle.captions(), vlm, image_refs=image_refs,
            visibility=visibility, threshold=cfg.coref_threshold)
        meta = {
            "engine": "synthetic",
            "seed": cfg.seed,
            "episode_index": index,
            "goal": [goal.x, goal.y, goal.z],
            "gt_length": trajectory.path_length(),
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
                          if cfg.stamp_outputs else None,
        }
        episode = ds.Episode(episode_id=episode_id, scene_id=bundle.scene_id,
                             trajectory=trajectory, instruction=instruction,
                             image_refs=image_refs, meta=meta)
        verdict = ds.filter_episode(episode, cfg.tree_height, bundle.bev)
        if verdict.accepted:
            outcome.episode = episode
            return outcome
        outcome.rejections.append(verdict.reason or "rejected")
    return outcome


def run_generate(bundle: SceneBundle, cfg: PipelineConfig, count: int,
                 out_path: str | Path, vlm: VlmClient | None = None,
                 ) -> GenerationReport:
    """Produce ``count`` accepted episodes (resampling rejected ones) and
    write them as canonical JSONL."""
    cfg.validate()
    vlm = vlm or cfg.make_vlm()
    started = time.monotonic()
    rejections: dict[str, int] = {}
    sampling_failures = 0
    search_failures = 0
    episodes: list[ds.Episode] = []
    failed = 0

    def job(index: int) -> _EpisodeOutcome:
        t0 = time.monotonic()
        outcome = generate_episode(bundle, cfg, vlm, index)
        log.debug(json.dumps({
            "stage": "episode", "episode_index": index,
            "accepted": outcome.episode is not None,
            "duration_s": round(time.monotonic() - t0, 4),
        }))
        return outcome

    if count > 0:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(job, range(count)))
    else:
        outcomes = []
    for outcome in outcomes:
        sampling_failures += outcome.sampling_failures
        search_failures += outcome.search_failures
        for reason in outcome.rejections:
            rejections[reason] = rejections.get(reason, 0) + 1
        if outcome.episode is None:
            failed += 1
        else:
            episodes.append(outcome.episode)
    ds.write_episodes(episodes, out_path)
    return GenerationReport(
        requested=count, accepted=len(episodes), failed_episodes=failed,
        rejections=rejections, sampling_failures=sampling_failures,
        search_failures=search_failures, wall_time_s=time.monotonic() - started,
    )


@dataclass
class Violation:
    episode_id: str
    kind: str
    detail: str

    def to_dict(self) -> dict:
        return {"episode_id": self.episode_id, "kind": self.kind,
                "detail": self.detail}


@dataclass
class ValidationReport:
    episodes_checked: int
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"episodes_checked": self.episodes_checked,
                "ok": self.ok,
                "violations": [v.to_dict() for v in self.violations]}


_POSE_TOLERANCE = 1e-4  # canonical 9-digit float form rounds serialized poses


def run_validate(path: str | Path, cfg: PipelineConfig,
                 bundle: SceneBundle | None = None) -> ValidationReport:
    """Re-check every episode invariant in a dataset file.

    Collision and vegetation checks need the scene bundle; without one,
    schema, kinematics, and filter-rule checks still run.
    """
    path = Path(path)
    violations: list[Violation] = []
    seen_ids: set[str] = set()
    checked = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            checked += 1
            try:
                doc = json.loads(line)
                episode = ds.episode_from_dict(doc)
            except Exception as exc:
                violations.append(Violation(f"line {lineno}", "schema", str(exc)))
                continue
            if doc.get("schema_version") != ds.SCHEMA_VERSION:
                violations.append(Violation(
                    episode.episode_id, "schema",
                    f"unsupported schema_version {doc.get('schema_version')!r}"))
                continue
            if episode.episode_id in seen_ids:
                violations.append(Violation(episode.episode_id, "integrity",
                                            "duplicate episode_id"))
                continue
            seen_ids.add(episode.episode_id)
            violations.extend(_validate_episode(episode, cfg, bundle))
    return ValidationReport(episodes_checked=checked, violations=violations)


def _validate_episode(episode: ds.Episode, cfg: PipelineConfig,
                      bundle: SceneBundle | None) -> list[Violation]:
    out: list[Violation] = []
    t = episode.trajectory
    if not t.actions or t.actions[-1].kind is not tg.ActionKind.STOP:
        out.append(Violation(episode.episode_id, "schema",
                             "actions do not end with Stop"))
        return out
    rolled = tg.rollout(t.start, t.actions)
    if len(rolled) != len(t.poses):
        out.append(Violation(episode.episode_id, "kinematics",
                             f"pose count {len(t.poses)} != {len(rolled)}"))
    else:
        for k, (a, b) in enumerate(zip(rolled, t.poses)):
            if (abs(a.position.x - b.position.x) > _POSE_TOLERANCE
                    or abs(a.position.y - b.position.y) > _POSE_TOLERANCE
                    or abs(a.position.z - b.position.z) > _POSE_TOLERANCE
                    or a.yaw != b.yaw):
                out.append(Violation(episode.episode_id, "kinematics",
                                     f"pose {k} deviates from the action rollout"))
                break
    verdict = ds.filter_episode(episode, cfg.tree_height,
                                bundle.bev if bundle else None)
    if not verdict.accepted:
        out.append(Violation(episode.episode_id, "filter", verdict.reason or ""))
    if episode.instruction is not None and not episode.instruction.text:
        out.append(Violation(episode.episode_id, "instruction", "empty text"))
    if bundle is not None:
        for k in range(len(t.poses) - 1):
            if not segment_free(bundle.nav_grid, t.poses[k].position,
                                t.poses[k + 1].position):
                out.append(Violation(episode.episode_id, "collision",
                                     f"segment {k} crosses occupied space"))
                break
        goal = episode.meta.get("goal")
        if goal is not None:
            final = t.poses[-1].position
            d = final.distance_to(Point3(*goal))
            if d > cfg.trajgen.goal_tolerance + 1e-6:
                out.append(Violation(episode.episode_id, "goal",
                                     f"final pose {d:.2f} m from goal"))
    return out
