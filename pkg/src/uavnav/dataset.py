"""Episode assembly, quality filtering, JSONL serialization, splits,
and corpus statistics.

Episodes serialize to JSONL in a canonical form: fixed key order and
floats rounded to 9 significant digits, so byte-level diffs of dataset
files are meaningful. Unknown fields survive a read/write round trip.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .geometry import Point3
from .instructions import Instruction
from .occupancy import BevGrid
from .textproc import alnum_tokens, noun_verb_tables
from .trajgen import Action, Pose, Trajectory

SCHEMA_VERSION = 1
DEFAULT_TREE_HEIGHT = 15.0
MIN_ACTIONS = 2
MAX_ACTIONS = 150

SPLIT_NAMES = ("train", "test_seen", "test_unseen")


class DatasetError(RuntimeError):
    pass


class DatasetReadError(DatasetError):
    def __init__(self, path: str | Path, line_number: int, message: str) -> None:
        super().__init__(f"{path}:{line_number}: {message}")
        self.line_number = line_number


class IntegrityError(DatasetError):
    pass


class SplitConfigError(DatasetError):
    pass


@dataclass
class Episode:
    episode_id: str
    scene_id: str
    trajectory: Trajectory
    instruction: Instruction | None
    image_refs: list[str]
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)  # unknown fields, kept on round trip

    def __post_init__(self) -> None:
        if len(self.image_refs) != len(self.trajectory.poses):
            raise ValueError(
                f"episode {self.episode_id}: {len(self.image_refs)} image refs "
                f"for {len(self.trajectory.poses)} poses"
            )


def round_sig(value: float, digits: int = 9) -> float:
    """Round to a fixed number of significant digits (canonical float form)."""
    if value == 0 or not math.isfinite(value):
        return float(value)
    return float(round(value, digits - 1 - math.floor(math.log10(abs(value)))))


def _canonical(value):
    if isinstance(value, float):
        return round_sig(value)
    if isinstance(value, dict):
        return {k: _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def _pose_doc(pose: Pose) -> dict:
    return {
        "position": [round_sig(pose.position.x), round_sig(pose.position.y),
                     round_sig(pose.position.z)],
        "yaw": round_sig(pose.yaw),
    }


def _pose_from_doc(doc: dict) -> Pose:
    x, y, z = doc["position"]
    return Pose(Point3(float(x), float(y), float(z)), float(doc["yaw"]))


_KNOWN_KEYS = {
    "schema_version", "episode_id", "scene_id", "start", "actions", "poses",
    "target_landmark_id", "instruction", "image_refs", "meta",
}


def episode_to_dict(episode: Episode) -> dict:
    t = episode.trajectory
    doc = {
        "schema_version": SCHEMA_VERSION,
        "episode_id": episode.episode_id,
        "scene_id": episode.scene_id,
        "start": _pose_doc(t.start),
        "actions": [_canonical(a.to_dict()) for a in t.actions],
        "poses": [_pose_doc(p) for p in t.poses],
        "target_landmark_id": t.target_landmark_id,
        "instruction": (
            {"text": episode.instruction.text,
             "sub_instructions": list(episode.instruction.sub_instructions)}
            if episode.instruction is not None else None
        ),
        "image_refs": list(episode.image_refs),
        "meta": _canonical(episode.meta),
    }
    for key in sorted(episode.extra):
        doc[key] = _canonical(episode.extra[key])
    return doc


def episode_from_dict(doc: dict) -> Episode:
    trajectory = Trajectory(
        start=_pose_from_doc(doc["start"]),
        actions=[Action.from_dict(a) for a in doc["actions"]],
        poses=[_pose_from_doc(p) for p in doc["poses"]],
        target_landmark_id=int(doc.get("target_landmark_id", -1)),
    )
    instr_doc = doc.get("instruction")
    instruction = None
    if instr_doc is not None:
        instruction = Instruction(text=instr_doc["text"],
                                  sub_instructions=list(instr_doc["sub_instructions"]))
    extra = {k: doc[k] for k in doc if k not in _KNOWN_KEYS}
    return Episode(
        episode_id=str(doc["episode_id"]),
        scene_id=str(doc["scene_id"]),
        trajectory=trajectory,
        instruction=instruction,
        image_refs=[str(r) for r in doc["image_refs"]],
        meta=dict(doc.get("meta", {})),
        extra=extra,
    )


def episode_to_line(episode: Episode) -> str:
    return json.dumps(episode_to_dict(episode), separators=(",", ":"),
                      ensure_ascii=False)


def write_episodes(episodes: Iterable[Episode], path: str | Path) -> int:
    """Write canonical JSONL, one episode per line; returns the count."""
    path = Path(path)
    seen: set[str] = set()
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for episode in episodes:
            if episode.episode_id in seen:
                raise IntegrityError(f"duplicate episode_id {episode.episode_id!r}")
            seen.add(episode.episode_id)
            fh.write(episode_to_line(episode) + "\n")
            count += 1
    return count


def read_episodes(path: str | Path) -> list[Episode]:
    path = Path(path)
    episodes: list[Episode] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                episode = episode_from_dict(doc)
            except IntegrityError:
                raise
            except Exception as exc:
                raise DatasetReadError(path, lineno, str(exc)) from exc
            if episode.episode_id in seen:
                raise IntegrityError(
                    f"{path}:{lineno}: duplicate episode_id {episode.episode_id!r}"
                )
            seen.add(episode.episode_id)
            episodes.append(episode)
    return episodes


@dataclass(frozen=True)
class FilterVerdict:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = FilterVerdict(True)


def filter_episode(episode: Episode, tree_height: float = DEFAULT_TREE_HEIGHT,
                   bev: BevGrid | None = None) -> FilterVerdict:
    """Quality gate: action-count bounds, tree altitude rule, damaged images.

    The vegetation check needs the scene's BEV grid; without one it is
    skipped (pure length and damage checks remain).
    """
    n = len(episode.trajectory.actions)
    if n < MIN_ACTIONS:
        return FilterVerdict(False, "too_short")
    if n > MAX_ACTIONS:
        return FilterVerdict(False, "too_long")
    damaged = set(episode.meta.get("damaged_image_indices", []))
    if damaged:
        return FilterVerdict(False, "damaged_image")
    if bev is not None and bev.vegetation is not None:
        for pose in episode.trajectory.poses:
            p = pose.position
            if p.z < tree_height and bev.is_vegetation(p.x, p.y):
                return FilterVerdict(False, "below_tree_altitude")
    return ACCEPT


@dataclass
class DatasetSplit:
    name: str
    scene_ids: set[str]
    episodes: list[Episode]


def normalize_scene_assignment(assignment: Mapping) -> dict[str, str]:
    """Accept either {scene_id: split} or {split: [scene_ids]} form."""
    if all(k in SPLIT_NAMES for k in assignment):
        normalized: dict[str, str] = {}
        for split, scenes in assignment.items():
            for scene in scenes:
                if scene in normalized and normalized[scene] != split:
                    raise SplitConfigError(
                        f"scene {scene!r} assigned to both "
                        f"{normalized[scene]!r} and {split!r}"
                    )
                normalized[scene] = split
        return normalized
    out = {str(k): str(v) for k, v in assignment.items()}
    for scene, split in out.items():
        if split not in SPLIT_NAMES:
            raise SplitConfigError(f"unknown split {split!r} for scene {scene!r}")
    return out


def split_dataset(
    episodes: Sequence[Episode], scene_assignment: Mapping
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Partition episodes by scene into train / test_seen / test_unseen."""
    assignment = normalize_scene_assignment(scene_assignment)
    train_scenes = {s for s, sp in assignment.items() if sp == "train"}
    unseen_scenes = {s for s, sp in assignment.items() if sp == "test_unseen"}
    if train_scenes & unseen_scenes:
        raise SplitConfigError(
            f"scenes in both train and test_unseen: {sorted(train_scenes & unseen_scenes)}"
        )
    splits = {name: DatasetSplit(name=name, scene_ids=set(), episodes=[])
              for name in SPLIT_NAMES}
    for scene, split in assignment.items():
        splits[split].scene_ids.add(scene)
    for episode in episodes:
        split = assignment.get(episode.scene_id)
        if split is None:
            raise SplitConfigError(
                f"episode {episode.episode_id!r} has unassigned scene "
                f"{episode.scene_id!r}"
            )
        splits[split].episodes.append(episode)
    return splits["train"], splits["test_seen"], splits["test_unseen"]


@dataclass
class CorpusStats:
    episode_count: int
    action_histogram: dict[str, int]
    length_histogram: dict[str, int]  # path length, meters buckets
    height_histogram: dict[str, int]  # mean altitude, meters buckets
    vocab_size: int
    mean_instruction_tokens: float
    noun_table: dict[str, int]
    verb_table: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "episode_count": self.episode_count,
            "action_histogram": dict(sorted(self.action_histogram.items())),
            "length_histogram": dict(sorted(self.length_histogram.items(),
                                            key=lambda kv: float(kv[0].split("-")[0]))),
            "height_histogram": dict(sorted(self.height_histogram.items(),
                                            key=lambda kv: float(kv[0].split("-")[0]))),
            "vocab_size": self.vocab_size,
            "mean_instruction_tokens": round_sig(self.mean_instruction_tokens),
            "noun_table": dict(Counter(self.noun_table).most_common(50)),
            "verb_table": dict(Counter(self.verb_table).most_common(50)),
        }

    def to_text(self) -> str:
        doc = self.to_dict()
        lines = [f"episodes: {doc['episode_count']}",
                 f"vocab size: {doc['vocab_size']}",
                 f"mean instruction tokens: {doc['mean_instruction_tokens']}"]
        for name in ("action_histogram", "length_histogram", "height_histogram"):
            lines.append(f"{name.replace('_', ' ')}:")
            for key, count in doc[name].items():
                lines.append(f"  {key:>12}  {count}")
        for name in ("noun_table", "verb_table"):
            top = list(doc[name].items())[:10]
            lines.append(f"top {name.split('_')[0]}s: "
                         + ", ".join(f"{w}({c})" for w, c in top))
        return "\n".join(lines)


def _bucket(value: float, width: float) -> str:
    lo = math.floor(value / width) * width
    return f"{lo:g}-{lo + width:g}"


def compute_stats(episodes: Sequence[Episode], length_bucket: float = 25.0,
                  height_bucket: float = 25.0) -> CorpusStats:
    """Exact histograms and vocabulary over a set of episodes."""
    actions: Counter = Counter()
    lengths: Counter = Counter()
    heights: Counter = Counter()
    vocab: set[str] = set()
    token_total = 0
    instruction_count = 0
    texts: list[str] = []
    for episode in episodes:
        t = episode.trajectory
        for action in t.actions:
            actions[action.kind.value] += 1
        lengths[_bucket(t.path_length(), length_bucket)] += 1
        mean_alt = sum(p.position.z for p in t.poses) / len(t.poses)
        heights[_bucket(mean_alt, height_bucket)] += 1
        if episode.instruction is not None:
            tokens = alnum_tokens(episode.instruction.text)
            vocab.update(tokens)
            token_total += len(tokens)
            instruction_count += 1
            texts.append(episode.instruction.text)
    nouns, verbs = noun_verb_tables(texts)
    return CorpusStats(
        episode_count=len(episodes),
        action_histogram=dict(actions),
        length_histogram=dict(lengths),
        height_histogram=dict(heights),
        vocab_size=len(vocab),
        mean_instruction_tokens=(token_total / instruction_count
                                 if instruction_count else 0.0),
        noun_table=dict(nouns),
        verb_table=dict(verbs),
    )
