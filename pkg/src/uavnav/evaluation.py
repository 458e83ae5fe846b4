"""Replay of action sequences against a scene grid, and VLN scoring.

Metrics: navigation error (final-pose distance to goal), success rate
(stopped within the radius), oracle success rate (any pose within the
radius), and success weighted by path length, clamped so that one
episode never contributes more than 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .geometry import Point3
from .occupancy import VoxelGrid, segment_free
from .trajgen import Action, ActionKind, Pose, step

SUCCESS_RADIUS = 20.0
STEP_CAP = 500  # bounds runaway agents; generated trajectories max out at 150

_TRANSLATING = (ActionKind.FORWARD, ActionKind.MOVE_UP, ActionKind.MOVE_DOWN)


@dataclass(frozen=True)
class ReplayResult:
    final: Pose
    path: list[Pose]  # pose after every consumed action, start included
    executed_length: float
    collided: bool
    first_collision_index: int | None


@dataclass(frozen=True)
class EvalResult:
    ne: float
    success: bool
    oracle_success: bool
    spl_term: float
    executed_length: float
    gt_length: float


@dataclass(frozen=True)
class EvalSummary:
    ne: float
    sr: float
    osr: float
    spl: float
    count: int

    def to_dict(self) -> dict:
        return {"ne": self.ne, "sr": self.sr, "osr": self.osr,
                "spl": self.spl, "count": self.count}


def replay(start: Pose, actions: Sequence[Action], grid: VoxelGrid,
           step_cap: int = STEP_CAP) -> ReplayResult:
    """Roll the kinematics; colliding moves are no-ops (agent halts in place).

    Consumption ends at the first Stop or at the step cap. The executed
    length sums the translations that actually happened.
    """
    pose = start
    path = [start]
    executed = 0.0
    collided = False
    first_collision: int | None = None
    for index, action in enumerate(actions[:step_cap]):
        if action.kind is ActionKind.STOP:
            path.append(pose)
            break
        nxt = step(pose, action)
        if action.kind in _TRANSLATING:
            if segment_free(grid, pose.position, nxt.position):
                executed += pose.position.distance_to(nxt.position)
                pose = nxt
            else:
                if not collided:
                    collided = True
                    first_collision = index
        else:
            pose = nxt
        path.append(pose)
    return ReplayResult(final=pose, path=path, executed_length=executed,
                        collided=collided, first_collision_index=first_collision)


def score(result: ReplayResult, goal: Point3, gt_length: float,
          radius: float = SUCCESS_RADIUS) -> EvalResult:
    """Score one replayed episode against its goal."""
    if gt_length <= 0:
        raise ValueError("ground-truth path length must be positive")
    ne = result.final.position.distance_to(goal)
    success = ne <= radius
    oracle = any(p.position.distance_to(goal) <= radius for p in result.path)
    spl = gt_length / max(gt_length, result.executed_length) if success else 0.0
    return EvalResult(ne=ne, success=success, oracle_success=oracle,
                      spl_term=spl, executed_length=result.executed_length,
                      gt_length=gt_length)


def aggregate(results: Sequence[EvalResult]) -> EvalSummary:
    """Means over episodes; SR and OSR as proportions, SPL as mean term."""
    if not results:
        raise ValueError("cannot aggregate zero results")
    n = len(results)
    return EvalSummary(
        ne=math.fsum(r.ne for r in results) / n,
        sr=sum(1 for r in results if r.success) / n,
        osr=sum(1 for r in results if r.oracle_success) / n,
        spl=math.fsum(r.spl_term for r in results) / n,
        count=n,
    )
