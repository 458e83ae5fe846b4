#!/usr/bin/env python3
"""Benchmark trajectory search over goal distance and scene clutter.

Reports wall time and path cost for the action-space search across a
sweep of goal distances on randomized obstacle grids.
"""

from __future__ import annotations

import argparse
import math
import statistics
import time

import numpy as np

from uavnav.geometry import Point3
from uavnav.occupancy import VoxelGrid, is_free
from uavnav.trajgen import NoPathError, Pose, TrajGenConfig, astar_search, path_cost_units


def random_grid(rng: np.random.Generator, dims, n_boxes: int) -> VoxelGrid:
    occ = np.zeros(dims, dtype=bool)
    for _ in range(n_boxes):
        w, d = rng.integers(4, 14, size=2)
        h = int(rng.integers(6, dims[2] - 2))
        i = int(rng.integers(0, dims[0] - w))
        j = int(rng.integers(0, dims[1] - d))
        occ[i:i + w, j:j + d, 0:h] = True
    return VoxelGrid(origin=np.zeros(3), voxel_size=1.0, dims=tuple(dims),
                     occupancy=occ)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenes", type=int, default=10)
    parser.add_argument("--boxes", type=int, default=12)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    cfg = TrajGenConfig(height_range=(4.0, 26.0), max_expansions=500_000)
    dims = (120, 120, 30)
    for distance in (15.0, 30.0, 60.0, 90.0):
        times, costs, failures = [], [], 0
        trials = 0
        while trials < args.scenes:
            grid = random_grid(rng, dims, args.boxes)
            sx, sy = rng.uniform(15, dims[0] - 15, size=2)
            sz = rng.uniform(6, 24)
            angle = rng.uniform(0, 2 * math.pi)
            start = Pose(Point3(float(sx), float(sy), float(sz)),
                         30.0 * int(rng.integers(0, 12)))
            goal = Point3(float(sx + distance * math.cos(angle)),
                          float(sy + distance * math.sin(angle)), float(sz))
            if not is_free(grid, start.position) or not is_free(grid, goal):
                continue
            trials += 1
            t0 = time.perf_counter()
            try:
                trajectory = astar_search(start, goal, grid, cfg)
            except NoPathError:
                failures += 1
                continue
            times.append(time.perf_counter() - t0)
            costs.append(path_cost_units(trajectory.actions))
        if times:
            print(f"d={distance:5.1f} m  median={1e3 * statistics.median(times):8.2f} ms  "
                  f"p max={1e3 * max(times):8.2f} ms  "
                  f"mean cost={statistics.mean(costs):7.1f} units  "
                  f"no-path={failures}")
        else:
            print(f"d={distance:5.1f} m  all {failures} searches failed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
