"""Independent oracle implementations used to cross-check the package.

Everything here is deliberately written from scratch with different
algorithms or data layouts than the code under test: brute-force set
computations, dense sampling, union-find labeling, textbook Dijkstra,
and exhaustive matching.
"""

from __future__ import annotations

import math
from heapq import heappop, heappush

import numpy as np

from uavnav.geometry import Point3
from uavnav.occupancy import VoxelGrid, segment_free
from uavnav.trajgen import TrajGenConfig, Pose

SQRT3 = math.sqrt(3.0)


def brute_force_cells(points: np.ndarray, origin: np.ndarray, size: float) -> set:
    """Set of voxel cells covering the points, by direct flooring."""
    cells = set()
    for p in points:
        cells.add((math.floor((p[0] - origin[0]) / size),
                   math.floor((p[1] - origin[1]) / size),
                   math.floor((p[2] - origin[2]) / size)))
    return cells


def point_blocked(grid: VoxelGrid, x: float, y: float, z: float) -> bool:
    """Direct point-in-occupied-voxel check (conservative out of bounds)."""
    i = math.floor((x - grid.origin[0]) / grid.voxel_size)
    j = math.floor((y - grid.origin[1]) / grid.voxel_size)
    k = math.floor((z - grid.origin[2]) / grid.voxel_size)
    if not (0 <= i < grid.dims[0] and 0 <= j < grid.dims[1] and 0 <= k < grid.dims[2]):
        return True
    return bool(grid.occupancy[i, j, k])


def dense_segment_free(grid: VoxelGrid, a: Point3, b: Point3,
                       step: float = 0.05) -> bool:
    """Sample the segment every ``step`` meters and check each point."""
    length = a.distance_to(b)
    n = max(1, int(math.ceil(length / step)))
    for k in range(n + 1):
        t = k / n
        if point_blocked(grid, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
                         a.z + t * (b.z - a.z)):
            return False
    return True


def bev_columns(grid: VoxelGrid) -> dict[tuple[int, int], float]:
    """Column-scan BEV oracle: occupied columns with their top heights."""
    out: dict[tuple[int, int], float] = {}
    nx, ny, nz = grid.dims
    for i in range(nx):
        for j in range(ny):
            top = -1
            for k in range(nz):
                if grid.occupancy[i, j, k]:
                    top = k
            if top >= 0:
                out[(i, j)] = (top + 1) * grid.voxel_size
    return out


def union_find_components(occupancy: np.ndarray) -> int:
    """Count 4-connected components with union-find (no BFS/DFS)."""
    nx, ny = occupancy.shape
    parent: dict[tuple[int, int], tuple[int, int]] = {}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for i in range(nx):
        for j in range(ny):
            if occupancy[i, j]:
                parent[(i, j)] = (i, j)
    for i in range(nx):
        for j in range(ny):
            if not occupancy[i, j]:
                continue
            for ni, nj in ((i + 1, j), (i, j + 1)):
                if ni < nx and nj < ny and occupancy[ni, nj]:
                    ra, rb = find((i, j)), find((ni, nj))
                    if ra != rb:
                        parent[ra] = rb
    return len({find(c) for c in parent})


# -- search state graph (shared convention, independently derived tables) --

def _half_decomposition(value: float) -> tuple[int, int]:
    """(p, q) with value == (p + q * sqrt(3)) / 2, integer p and q."""
    for p in range(-2, 3):
        for q in range(-1, 2):
            if abs((p + q * SQRT3) / 2.0 - value) < 1e-9:
                return p, q
    raise AssertionError(f"no half-integer decomposition for {value}")


_COS = [_half_decomposition(math.cos(math.radians(30 * k))) for k in range(12)]
_SIN = [_half_decomposition(math.sin(math.radians(30 * k))) for k in range(12)]


DOMINANCE_MARGIN = 45  # shared state-graph semantics: see the module under test


def dijkstra_units(start: Pose, goal: Point3, grid: VoxelGrid,
                   cfg: TrajGenConfig) -> int | None:
    """Optimal cost in 0.1 m units to reach the goal-tolerance sphere.

    Textbook Dijkstra, no heuristic. States are exact integer tuples
    (a, b, c, d, kz, yaw) with x = x0 + 1.5 (a + b sqrt(3)) and friends.
    A state is pruned when some same-bin state settled at least
    DOMINANCE_MARGIN units cheaper (the search-graph convention). Returns
    None when the goal is unreachable.
    """
    x0, y0, z0 = start.position.x, start.position.y, start.position.z
    yaw0 = int(round(start.yaw / 30.0)) % 12
    goal_xyz = (goal.x, goal.y, goal.z)
    z_lo, z_hi = cfg.height_range

    moves = []
    for mag in sorted(cfg.forward_granularities):
        moves.append(("f", int(round(mag / 3.0)), int(round(mag * 10))))
    moves.append(("l", 0, 1))
    moves.append(("r", 0, 1))
    moves.append(("u", 0, 30))
    moves.append(("d", 0, 30))

    def position(state):
        a, b, c, d, kz, _ = state
        return (x0 + 1.5 * (a + b * SQRT3), y0 + 1.5 * (c + d * SQRT3),
                z0 + 3.0 * kz)

    start_state = (0, 0, 0, 0, 0, yaw0)
    heap = [(0, 0, start_state)]
    settled: set = set()
    bin_floor: dict[tuple, int] = {}
    seq = 0
    while heap:
        g, _, state = heappop(heap)
        if state in settled:
            continue
        settled.add(state)
        pos = position(state)
        if math.dist(pos, goal_xyz) <= cfg.goal_tolerance:
            return g
        key = (math.floor(pos[0] / 1.0), math.floor(pos[1] / 1.0),
               state[4], state[5])
        best = bin_floor.get(key)
        if best is not None and best <= g - DOMINANCE_MARGIN:
            continue
        if best is None or g < best:
            bin_floor[key] = g
        a, b, c, d, kz, yaw = state
        for kind, steps, units in moves:
            if kind == "f":
                cp, cq = _COS[yaw]
                sp, sq = _SIN[yaw]
                nstate = (a + steps * cp, b + steps * cq,
                          c + steps * sp, d + steps * sq, kz, yaw)
            elif kind == "l":
                nstate = (a, b, c, d, kz, (yaw + 1) % 12)
            elif kind == "r":
                nstate = (a, b, c, d, kz, (yaw - 1) % 12)
            elif kind == "u":
                nstate = (a, b, c, d, kz + 1, yaw)
            else:
                nstate = (a, b, c, d, kz - 1, yaw)
            npos = position(nstate)
            if kind in ("u", "d") and not (z_lo <= npos[2] <= z_hi):
                continue
            if kind in ("f", "u", "d"):
                if not segment_free(grid, Point3(*pos), Point3(*npos)):
                    continue
            if nstate in settled:
                continue
            seq += 1
            heappush(heap, (g + units, seq, nstate))
    return None


def bfs_hops(available: np.ndarray, start: tuple[int, int],
             goal: tuple[int, int]) -> int | None:
    """4-connected breadth-first hop count over available lattice points."""
    from collections import deque

    if not available[start] or not available[goal]:
        return None
    nx, ny = available.shape
    dist = {start: 0}
    queue = deque([start])
    while queue:
        i, j = queue.popleft()
        if (i, j) == goal:
            return dist[(i, j)]
        for ni, nj in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if 0 <= ni < nx and 0 <= nj < ny and available[ni, nj] \
                    and (ni, nj) not in dist:
                dist[(ni, nj)] = dist[(i, j)] + 1
                queue.append((ni, nj))
    return None


def split_runs_oracle(kinds: list[str]) -> list[list[str]]:
    """Independent grouping enumeration for the slight-turn merge rule.

    Scans indices directly: finds maximal equal-kind stretches, marks the
    lone turns that sit right before a forward stretch, then re-groups by
    the adjusted labels.
    """
    n = len(kinds)
    if n == 0:
        return []
    stretches = []
    i = 0
    while i < n:
        j = i
        while j < n and kinds[j] == kinds[i]:
            j += 1
        stretches.append((i, j))
        i = j
    labels = list(kinds)
    for s, (i, j) in enumerate(stretches):
        if (j - i == 1 and kinds[i] in ("turn_left", "turn_right")
                and s + 1 < len(stretches)
                and kinds[stretches[s + 1][0]] == "forward"):
            labels[i] = "forward"
    groups: list[list[str]] = []
    i = 0
    while i < n:
        j = i
        while j < n and labels[j] == labels[i]:
            j += 1
        groups.append(kinds[i:j])
        i = j
    return groups


def exhaustive_greedy_merge(reference: np.ndarray, frame: np.ndarray,
                            threshold: float) -> np.ndarray:
    """Reference merge for a 2-frame set: repeatedly scan all unused pairs
    for the global best cosine similarity; average matched pairs."""
    out = reference.astype(float).copy()
    counts = [1] * len(out)
    used_i: set[int] = set()
    used_j: set[int] = set()

    def cosine(u, v):
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0 or nv == 0:
            return 0.0
        return min(1.0, max(-1.0, float(np.dot(u, v) / (nu * nv))))

    while True:
        best = None
        for i in range(len(out)):
            if i in used_i:
                continue
            for j in range(len(frame)):
                if j in used_j:
                    continue
                sim = cosine(out[i], frame[j])
                if best is None or sim > best[0]:
                    best = (sim, i, j)
        if best is None or best[0] <= threshold:
            return out
        sim, i, j = best
        out[i] = (out[i] * counts[i] + frame[j]) / (counts[i] + 1)
        counts[i] += 1
        used_i.add(i)
        used_j.add(j)
