"""Collision-free trajectory generation over the discrete UAV action space.

Actions: Forward (3, 6, or 9 m along the current heading), TurnLeft /
TurnRight (30 degrees), MoveUp / MoveDown (3 m), Stop. Headings are
quantized to 12 bins, which makes every reachable horizontal offset an
exact element of the lattice 1.5 * (a + b * sqrt(3)); the searches below
exploit that to keep states integer-valued and edge costs exact (tenths
of a meter, with turns costing one unit to discourage free spinning).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from heapq import heappop, heappush

import numpy as np

from .geometry import Point3
from .occupancy import BevGrid, VoxelGrid, is_free, segment_free_coords
from .segmentation import LandmarkInstance

SQRT3 = math.sqrt(3.0)

FORWARD_MAGNITUDES = (3.0, 6.0, 9.0)
VERTICAL_STEP = 3.0
TURN_DEGREES = 30.0

TURN_COST_UNITS = 1  # 0.1 m per turn; keeps distance-based heuristics admissible
UNITS_PER_METER = 10
POSITION_BIN = 1.0  # dominance bin, below the smallest 3 m step

# A settled state makes every same-bin state at least this much costlier
# prunable. Same-bin states sit under sqrt(2) m apart, so the heuristic
# below spreads by less than 30 + 10 * sqrt(2) between them; with a larger
# margin the cheaper state settles first under both A* and plain Dijkstra
# orderings, making the pruned search graph identical for the two.
BIN_DOMINANCE_MARGIN_UNITS = 45

DEFAULT_GOAL_TOLERANCE = 5.0
DEFAULT_GOAL_OFFSET = 10.0


class TrajGenError(RuntimeError):
    pass


class NoPathError(TrajGenError):
    pass


class SamplingError(TrajGenError):
    pass


class EligibilityError(SamplingError):
    pass


class SamplingExhaustedError(SamplingError):
    pass


class ActionKind(str, Enum):
    FORWARD = "forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    MOVE_UP = "move_up"
    MOVE_DOWN = "move_down"
    STOP = "stop"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    magnitude: float | None = None

    def __post_init__(self) -> None:
        if self.kind is ActionKind.FORWARD:
            if self.magnitude not in FORWARD_MAGNITUDES:
                raise ValueError(f"forward magnitude must be one of {FORWARD_MAGNITUDES}")
        elif self.kind in (ActionKind.TURN_LEFT, ActionKind.TURN_RIGHT):
            if self.magnitude != TURN_DEGREES:
                raise ValueError("turn magnitude must be 30 degrees")
        elif self.kind in (ActionKind.MOVE_UP, ActionKind.MOVE_DOWN):
            if self.magnitude != VERTICAL_STEP:
                raise ValueError("vertical magnitude must be 3 m")
        elif self.magnitude is not None:
            raise ValueError("stop takes no magnitude")

    def to_dict(self) -> dict:
        doc: dict = {"kind": self.kind.value}
        if self.magnitude is not None:
            doc["magnitude"] = self.magnitude
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Action":
        magnitude = doc.get("magnitude")
        return cls(ActionKind(doc["kind"]), float(magnitude) if magnitude is not None else None)


STOP = Action(ActionKind.STOP)
TURN_LEFT = Action(ActionKind.TURN_LEFT, TURN_DEGREES)
TURN_RIGHT = Action(ActionKind.TURN_RIGHT, TURN_DEGREES)
MOVE_UP = Action(ActionKind.MOVE_UP, VERTICAL_STEP)
MOVE_DOWN = Action(ActionKind.MOVE_DOWN, VERTICAL_STEP)


def forward(magnitude: float) -> Action:
    return Action(ActionKind.FORWARD, magnitude)


@dataclass(frozen=True)
class Pose:
    position: Point3
    yaw: float  # degrees in [0, 360), multiple of 30

    def __post_init__(self) -> None:
        if not math.isfinite(self.yaw):
            raise ValueError("yaw must be finite")
        if abs(self.yaw - round(self.yaw / TURN_DEGREES) * TURN_DEGREES) > 1e-9:
            raise ValueError(f"yaw {self.yaw} is not a multiple of {TURN_DEGREES} degrees")
        if not (0.0 <= self.yaw < 360.0):
            raise ValueError(f"yaw {self.yaw} outside [0, 360)")


def yaw_index(yaw: float) -> int:
    return int(round(yaw / TURN_DEGREES)) % 12


def step(pose: Pose, action: Action) -> Pose:
    """Discrete kinematics; Stop is the identity."""
    p = pose.position
    if action.kind is ActionKind.FORWARD:
        rad = math.radians(pose.yaw)
        return Pose(
            Point3(p.x + action.magnitude * math.cos(rad),
                   p.y + action.magnitude * math.sin(rad), p.z),
            pose.yaw,
        )
    if action.kind is ActionKind.TURN_LEFT:
        return Pose(p, (pose.yaw + TURN_DEGREES) % 360.0)
    if action.kind is ActionKind.TURN_RIGHT:
        return Pose(p, (pose.yaw - TURN_DEGREES) % 360.0)
    if action.kind is ActionKind.MOVE_UP:
        return Pose(Point3(p.x, p.y, p.z + VERTICAL_STEP), pose.yaw)
    if action.kind is ActionKind.MOVE_DOWN:
        return Pose(Point3(p.x, p.y, p.z - VERTICAL_STEP), pose.yaw)
    return pose


def rollout(start: Pose, actions: list[Action]) -> list[Pose]:
    poses = [start]
    for action in actions:
        poses.append(step(poses[-1], action))
    return poses


def action_cost_units(action: Action) -> int:
    """Edge cost in tenths of a meter; turns cost one unit, Stop is free."""
    if action.kind is ActionKind.FORWARD:
        return int(round(action.magnitude * UNITS_PER_METER))
    if action.kind in (ActionKind.MOVE_UP, ActionKind.MOVE_DOWN):
        return int(round(VERTICAL_STEP * UNITS_PER_METER))
    if action.kind is ActionKind.STOP:
        return 0
    return TURN_COST_UNITS


def path_cost_units(actions: list[Action]) -> int:
    return sum(action_cost_units(a) for a in actions)


@dataclass(frozen=True)
class TrajGenConfig:
    height_range: tuple[float, float] = (20.0, 120.0)
    min_landmark_height: float = 20.0
    start_distance_range: tuple[float, float] = (60.0, 250.0)
    forward_granularities: tuple[float, ...] = FORWARD_MAGNITUDES
    goal_tolerance: float = DEFAULT_GOAL_TOLERANCE
    goal_offset: float = DEFAULT_GOAL_OFFSET
    max_expansions: int = 2_000_000
    max_sample_attempts: int = 200
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.start_distance_range
        if not (0 < lo <= hi):
            raise ValueError("start distance range must satisfy 0 < min <= max")
        if self.height_range[0] > self.height_range[1]:
            raise ValueError("height range min must not exceed max")
        if not self.forward_granularities:
            raise ValueError("at least one forward granularity is required")
        for g in self.forward_granularities:
            if g not in FORWARD_MAGNITUDES:
                raise ValueError(f"unsupported forward granularity {g}")
        if self.goal_tolerance <= 0 or self.goal_offset < 0:
            raise ValueError("goal tolerance must be positive, offset non-negative")


@dataclass(frozen=True)
class Trajectory:
    start: Pose
    actions: list[Action]  # always ends with Stop
    poses: list[Pose]  # kinematic rollout, len(actions) + 1
    target_landmark_id: int = -1

    @classmethod
    def from_actions(cls, start: Pose, actions: list[Action],
                     target_landmark_id: int = -1) -> "Trajectory":
        if not actions or actions[-1].kind is not ActionKind.STOP:
            raise ValueError("trajectory actions must end with Stop")
        return cls(start=start, actions=list(actions),
                   poses=rollout(start, actions),
                   target_landmark_id=target_landmark_id)

    def path_length(self) -> float:
        return sum(
            self.poses[i].position.distance_to(self.poses[i + 1].position)
            for i in range(len(self.poses) - 1)
        )


# Per-heading decomposition of cos/sin(30k degrees) as (p + q*sqrt(3)) / 2.
_COS_PQ = ((2, 0), (0, 1), (1, 0), (0, 0), (-1, 0), (0, -1),
           (-2, 0), (0, -1), (-1, 0), (0, 0), (1, 0), (0, 1))
_SIN_PQ = ((0, 0), (1, 0), (0, 1), (2, 0), (0, 1), (1, 0),
           (0, 0), (-1, 0), (0, -1), (-2, 0), (0, -1), (-1, 0))

# Search state: (a, b, c, d, kz, yaw_idx) with
#   x = x0 + 1.5 * (a + b * sqrt(3)),  y = y0 + 1.5 * (c + d * sqrt(3)),
#   z = z0 + 3 * kz.
SearchState = tuple[int, int, int, int, int, int]


def search_moves(granularities: tuple[float, ...]) -> list[tuple[Action, int]]:
    """Canonical successor order shared by search and any external oracle."""
    moves = [(forward(g), int(round(g / 3.0))) for g in sorted(granularities)]
    moves += [(TURN_LEFT, 0), (TURN_RIGHT, 0), (MOVE_UP, 0), (MOVE_DOWN, 0)]
    return moves


def apply_move(state: SearchState, action: Action, steps: int) -> SearchState:
    a, b, c, d, kz, yaw = state
    if action.kind is ActionKind.FORWARD:
        cp, cq = _COS_PQ[yaw]
        sp, sq = _SIN_PQ[yaw]
        return (a + steps * cp, b + steps * cq, c + steps * sp, d + steps * sq, kz, yaw)
    if action.kind is ActionKind.TURN_LEFT:
        return (a, b, c, d, kz, (yaw + 1) % 12)
    if action.kind is ActionKind.TURN_RIGHT:
        return (a, b, c, d, kz, (yaw - 1) % 12)
    if action.kind is ActionKind.MOVE_UP:
        return (a, b, c, d, kz + 1, yaw)
    if action.kind is ActionKind.MOVE_DOWN:
        return (a, b, c, d, kz - 1, yaw)
    return state


def state_xyz(state: SearchState,
              origin: tuple[float, float, float]) -> tuple[float, float, float]:
    a, b, c, d, kz, _ = state
    return (origin[0] + 1.5 * (a + b * SQRT3),
            origin[1] + 1.5 * (c + d * SQRT3),
            origin[2] + VERTICAL_STEP * kz)


def state_position(state: SearchState, origin: tuple[float, float, float]) -> Point3:
    return Point3(*state_xyz(state, origin))


def bin_key(state: SearchState, origin: tuple[float, float, float]) -> tuple[int, int, int, int]:
    x, y, _ = state_xyz(state, origin)
    return (math.floor(x / POSITION_BIN), math.floor(y / POSITION_BIN),
            state[4], state[5])


def astar_search(start: Pose, goal: Point3, grid: VoxelGrid,
                 cfg: TrajGenConfig) -> Trajectory:
    """A* over exact (position, heading) states.

    Edge costs are meters moved in 0.1 m units plus one unit per turn.
    The heuristic rounds the Euclidean distance to the goal-tolerance
    sphere up to the next multiple of one 3 m step, which stays
    admissible (every path's length is a multiple of 3 m and at least
    the net displacement) and consistent; goal states all have zero
    heuristic, so they settle in cost order and the returned cost is
    minimal over the search graph. Ties break on the smaller heuristic,
    then first-in-first-out insertion. States deduplicate exactly; the
    bin-dominance rule above keeps the state space finite without
    breaking Dijkstra-comparability.
    """
    cfg.validate()
    if not is_free(grid, start.position):
        raise NoPathError("start pose is occupied or out of bounds")
    origin = start.position.as_tuple()
    goal_xyz = (goal.x, goal.y, goal.z)

    def heuristic(xyz: tuple[float, float, float]) -> float:
        d = math.dist(xyz, goal_xyz) - cfg.goal_tolerance
        if d <= 0.0:
            return 0.0
        return 30.0 * math.ceil(d / VERTICAL_STEP)

    moves = [(action, steps, action_cost_units(action))
             for action, steps in search_moves(cfg.forward_granularities)]
    start_state: SearchState = (0, 0, 0, 0, 0, yaw_index(start.yaw))
    g_pushed: dict[SearchState, int] = {start_state: 0}
    # Parent links are recorded when a state is settled, so the
    # reconstructed action chain is exactly the one whose swept segments
    # were collision-checked.
    parents: dict[SearchState, tuple[SearchState, Action] | None] = {}
    bin_best: dict[tuple, int] = {}
    h0 = heuristic(origin)
    heap: list[tuple[float, float, int, int, SearchState,
                     SearchState | None, Action | None]] = [
        (h0, h0, 0, 0, start_state, None, None)
    ]
    seq = 0
    expansions = 0
    z_lo, z_hi = cfg.height_range

    while heap:
        _, _, _, g_here, state, parent, via_action = heappop(heap)
        if state in parents:
            continue  # settled already
        parents[state] = (parent, via_action) if parent is not None else None
        expansions += 1
        if expansions > cfg.max_expansions:
            raise NoPathError(f"expansion budget {cfg.max_expansions} exceeded")
        pos = state_xyz(state, origin)
        if math.dist(pos, goal_xyz) <= cfg.goal_tolerance:
            actions: list[Action] = []
            s = state
            while parents[s] is not None:
                s, action = parents[s]  # type: ignore[misc]
                actions.append(action)
            actions.reverse()
            actions.append(STOP)
            return Trajectory.from_actions(start, actions)
        key = (math.floor(pos[0] / POSITION_BIN), math.floor(pos[1] / POSITION_BIN),
               state[4], state[5])
        best = bin_best.get(key)
        if best is not None and best <= g_here - BIN_DOMINANCE_MARGIN_UNITS:
            continue  # a much cheaper same-bin state already settled
        if best is None or g_here < best:
            bin_best[key] = g_here
        for action, steps, cost in moves:
            nstate = apply_move(state, action, steps)
            if nstate in parents:
                continue
            npos = state_xyz(nstate, origin)
            if action.kind in (ActionKind.MOVE_UP, ActionKind.MOVE_DOWN):
                if not (z_lo <= npos[2] <= z_hi):
                    continue
            if action.kind in (ActionKind.FORWARD, ActionKind.MOVE_UP,
                               ActionKind.MOVE_DOWN):
                if not segment_free_coords(grid, pos[0], pos[1], pos[2],
                                           npos[0], npos[1], npos[2]):
                    continue
            ng = g_here + cost
            if ng < g_pushed.get(nstate, _INF):
                g_pushed[nstate] = ng
                nh = heuristic(npos)
                seq += 1
                heappush(heap, (ng + nh, nh, seq, ng, nstate, state, action))
    raise NoPathError("open set exhausted without reaching the goal")


_INF = float("inf")


def _bearing_deg(dx: float, dy: float) -> float:
    return math.degrees(math.atan2(dy, dx)) % 360.0


def nearest_heading(bearing_deg: float) -> float:
    return (round(bearing_deg / TURN_DEGREES) % 12) * TURN_DEGREES


def _goal_on_line(from_xy: tuple[float, float], landmark: LandmarkInstance,
                  altitude: float, bev: BevGrid, grid: VoxelGrid,
                  cfg: TrajGenConfig) -> Point3 | None:
    """First point on the centroid->start line, at least goal_offset out,
    that is unoccupied in the BEV map and free in the voxel grid."""
    cx, cy = landmark.centroid
    vx, vy = from_xy[0] - cx, from_xy[1] - cy
    span = math.hypot(vx, vy)
    if span <= cfg.goal_offset:
        return None
    ux, uy = vx / span, vy / span
    t = cfg.goal_offset
    while t < span:
        gx, gy = cx + ux * t, cy + uy * t
        cell = bev.cell_of(gx, gy)
        bev_clear = bev.in_bounds(cell) and not bev.occupancy[cell]
        candidate = Point3(gx, gy, altitude)
        if bev_clear and is_free(grid, candidate):
            return candidate
        t += 1.0
    return None


def sample_endpoints(
    landmarks: list[LandmarkInstance],
    bev: BevGrid,
    grid: VoxelGrid,
    cfg: TrajGenConfig,
    rng: np.random.Generator,
) -> tuple[Pose, Point3, int]:
    """Pick a target landmark, start pose, and goal point.

    The target is uniform among landmarks at least as tall as the
    configured threshold; the start lies within the configured distance
    ring of its centroid, free in both maps at a uniformly drawn
    altitude; the goal sits on the start->centroid line just outside the
    landmark; the start heading is the 30-degree bin nearest the bearing
    to the goal.
    """
    cfg.validate()
    eligible = [lm for lm in landmarks if lm.height >= cfg.min_landmark_height]
    if not eligible:
        raise EligibilityError(
            f"no landmark at least {cfg.min_landmark_height} m tall"
        )
    lo, hi = cfg.start_distance_range
    for _ in range(cfg.max_sample_attempts):
        lm = eligible[int(rng.integers(len(eligible)))]
        altitude = float(rng.uniform(*cfg.height_range))
        radius = float(rng.uniform(lo, hi))
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        sx = float(lm.centroid[0] + radius * math.cos(theta))
        sy = float(lm.centroid[1] + radius * math.sin(theta))
        start_pos = Point3(sx, sy, altitude)
        if not is_free(grid, start_pos):
            continue
        if bev.column_top(sx, sy) >= altitude:
            continue
        goal = _goal_on_line((sx, sy), lm, altitude, bev, grid, cfg)
        if goal is None:
            continue
        yaw = nearest_heading(_bearing_deg(goal.x - sx, goal.y - sy))
        return Pose(start_pos, yaw), goal, lm.id
    raise SamplingExhaustedError(
        f"no valid start/goal pair after {cfg.max_sample_attempts} attempts"
    )


def chain_trajectories(
    segments: int,
    landmarks: list[LandmarkInstance],
    bev: BevGrid,
    grid: VoxelGrid,
    cfg: TrajGenConfig,
    rng: np.random.Generator,
) -> Trajectory:
    """Chain A* segments, each starting where the previous one stopped.

    Intermediate Stops are dropped; the result carries the last
    segment's target landmark.
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    start, goal, target = sample_endpoints(landmarks, bev, grid, cfg, rng)
    first = astar_search(start, goal, grid, cfg)
    if segments == 1:
        return replace(first, target_landmark_id=target)
    actions = [a for a in first.actions if a.kind is not ActionKind.STOP]
    current = first.poses[-1]
    lo, hi = cfg.start_distance_range
    for index in range(2, segments + 1):
        eligible = [lm for lm in landmarks if lm.height >= cfg.min_landmark_height]
        in_range = [
            lm for lm in eligible
            if lo <= math.hypot(lm.centroid[0] - current.position.x,
                                lm.centroid[1] - current.position.y) <= hi
        ]
        candidates = in_range or [lm for lm in eligible if lm.id != target] or eligible
        try:
            lm = candidates[int(rng.integers(len(candidates)))]
            goal = _goal_on_line(
                (current.position.x, current.position.y), lm,
                current.position.z, bev, grid, cfg,
            )
            if goal is None:
                raise SamplingExhaustedError("no clear goal on the connecting line")
            part = astar_search(current, goal, grid, cfg)
        except TrajGenError as exc:
            raise NoPathError(f"segment {index} of {segments} failed: {exc}") from exc
        target = lm.id
        actions.extend(a for a in part.actions if a.kind is not ActionKind.STOP)
        current = part.poses[-1]
    actions.append(STOP)
    return Trajectory.from_actions(start, actions, target_landmark_id=target)


@dataclass(frozen=True, eq=False)
class GridLattice:
    """Axis-aligned pose lattice for scenes with pre-rasterized imagery."""

    origin: tuple[float, float]
    spacing: float  # must be a legal forward magnitude
    dims: tuple[int, int]
    altitude: float
    available: np.ndarray  # bool (nx, ny)

    def __post_init__(self) -> None:
        if self.spacing not in FORWARD_MAGNITUDES:
            raise ValueError(f"lattice spacing must be one of {FORWARD_MAGNITUDES}")
        if self.available.shape != tuple(self.dims):
            raise ValueError("availability shape does not match dims")

    def pose(self, i: int, j: int, yaw: float) -> Pose:
        return Pose(
            Point3(self.origin[0] + i * self.spacing,
                   self.origin[1] + j * self.spacing, self.altitude),
            yaw,
        )


# Heading bins that line up with the four lattice directions.
_AXIS_STEPS = {0: (1, 0), 3: (0, 1), 6: (-1, 0), 9: (0, -1)}


def grid_search(lattice: GridLattice, start: tuple[int, int, float],
                goal: tuple[int, int]) -> Trajectory:
    """Cheapest lattice path between grid points, same action vocabulary.

    Forward moves step to 4-connected available neighbors; turning is
    allowed everywhere and costs one tie-break unit, so the result uses
    the fewest forward moves first and the fewest turns second.
    """
    si, sj, syaw = start
    gi, gj = goal
    if not (0 <= si < lattice.dims[0] and 0 <= sj < lattice.dims[1]):
        raise NoPathError("start lies outside the lattice")
    if not (0 <= gi < lattice.dims[0] and 0 <= gj < lattice.dims[1]):
        raise NoPathError("goal lies outside the lattice")
    if not lattice.available[si, sj]:
        raise NoPathError("start grid point is unavailable")
    if not lattice.available[gi, gj]:
        raise NoPathError("goal grid point is unavailable")

    start_node = (si, sj, yaw_index(syaw))
    move_units = int(round(lattice.spacing * UNITS_PER_METER))
    best: dict[tuple[int, int, int], int] = {start_node: 0}
    parents: dict[tuple[int, int, int], tuple[tuple[int, int, int], Action]] = {}
    heap: list[tuple[int, int, tuple[int, int, int]]] = [(0, 0, start_node)]
    seq = 0
    done: set[tuple[int, int, int]] = set()
    while heap:
        cost, _, node = heappop(heap)
        if node in done:
            continue
        done.add(node)
        i, j, yaw = node
        if (i, j) == (gi, gj):
            actions: list[Action] = []
            k = node
            while k in parents:
                k, action = parents[k]
                actions.append(action)
            actions.reverse()
            actions.append(STOP)
            return Trajectory.from_actions(lattice.pose(si, sj, syaw), actions)
        successors: list[tuple[tuple[int, int, int], Action, int]] = []
        if yaw in _AXIS_STEPS:
            di, dj = _AXIS_STEPS[yaw]
            ni, nj = i + di, j + dj
            if (0 <= ni < lattice.dims[0] and 0 <= nj < lattice.dims[1]
                    and lattice.available[ni, nj]):
                successors.append(((ni, nj, yaw), forward(lattice.spacing), move_units))
        successors.append(((i, j, (yaw + 1) % 12), TURN_LEFT, TURN_COST_UNITS))
        successors.append(((i, j, (yaw - 1) % 12), TURN_RIGHT, TURN_COST_UNITS))
        for nnode, action, units in successors:
            if nnode in done:
                continue
            ncost = cost + units
            if ncost < best.get(nnode, 1 << 62):
                best[nnode] = ncost
                parents[nnode] = (node, action)
                seq += 1
                heappush(heap, (ncost, seq, nnode))
    raise NoPathError("no lattice path from start to goal")
