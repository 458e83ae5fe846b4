"""Voxel occupancy mapping and collision queries.

Two map structures back trajectory search: a dense 3D voxel grid built
from the scene point cloud (optionally inflated by a safety margin) and
a 2D bird's-eye-view grid holding per-column maximum heights. Both are
immutable after construction, so concurrent read queries are safe.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import ndimage

from .geometry import Point3
from .scene import PointCloud

DEFAULT_VOXEL_SIZE = 1.0  # meters
DEFAULT_MARGIN = 2.0  # meters of safety inflation around occupied cells

_GRID_HEADER = struct.Struct("<3dd3q")  # origin xyz, voxel_size, dims xyz


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Dense 3D occupancy over a box; cell (i,j,k) spans origin + [i,i+1)*size."""

    origin: np.ndarray  # (3,) float64, min corner
    voxel_size: float
    dims: tuple[int, int, int]
    occupancy: np.ndarray  # bool array of shape dims

    def __post_init__(self) -> None:
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.occupancy.shape != tuple(self.dims):
            raise ValueError("occupancy shape does not match dims")

    def cell_of(self, p: Point3) -> tuple[int, int, int]:
        i = int(np.floor((p.x - self.origin[0]) / self.voxel_size))
        j = int(np.floor((p.y - self.origin[1]) / self.voxel_size))
        k = int(np.floor((p.z - self.origin[2]) / self.voxel_size))
        return (i, j, k)

    def in_bounds(self, cell: tuple[int, int, int]) -> bool:
        return all(0 <= c < d for c, d in zip(cell, self.dims))

    @property
    def max_corner(self) -> np.ndarray:
        return self.origin + np.array(self.dims) * self.voxel_size


@dataclass(frozen=True, eq=False)
class BevGrid:
    """Bird's-eye-view occupancy with per-cell max height.

    Heights are measured from the grid's base plane (``base_z``), i.e.
    max_height = (highest occupied voxel index + 1) * cell_size. The
    absolute top of a column is ``base_z + max_height``.
    """

    origin: np.ndarray  # (2,) float64
    cell_size: float
    dims: tuple[int, int]
    occupancy: np.ndarray  # bool (nx, ny)
    max_height: np.ndarray  # float64 (nx, ny), 0 where free
    base_z: float = 0.0
    vegetation: np.ndarray | None = field(default=None, compare=False)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        i = int(np.floor((x - self.origin[0]) / self.cell_size))
        j = int(np.floor((y - self.origin[1]) / self.cell_size))
        return (i, j)

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.dims[0] and 0 <= cell[1] < self.dims[1]

    def column_top(self, x: float, y: float) -> float:
        """Absolute z of the highest occupied voxel in the column; -inf if free."""
        cell = self.cell_of(x, y)
        if not self.in_bounds(cell) or not self.occupancy[cell]:
            return float("-inf")
        return self.base_z + float(self.max_height[cell])

    def is_vegetation(self, x: float, y: float) -> bool:
        if self.vegetation is None:
            return False
        cell = self.cell_of(x, y)
        return self.in_bounds(cell) and bool(self.vegetation[cell])


def voxelize(cloud: PointCloud, voxel_size: float = DEFAULT_VOXEL_SIZE,
             margin: float = DEFAULT_MARGIN,
             origin: tuple[float, float, float] | None = None) -> VoxelGrid:
    """Build the global voxel map from a point cloud.

    A voxel is occupied iff at least one point falls inside it; the
    occupied set is then dilated by ceil(margin / voxel_size) cells using
    the 6-neighborhood (face) structuring element. The grid covers the
    cloud bounds plus the margin; pass ``origin`` to anchor the grid's
    min corner explicitly (it must not exceed the cloud minimum).
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if len(cloud) == 0:
        return VoxelGrid(
            origin=np.zeros(3) if origin is None else np.asarray(origin, dtype=float),
            voxel_size=voxel_size, dims=(1, 1, 1),
            occupancy=np.zeros((1, 1, 1), dtype=bool),
        )
    margin_cells = int(np.ceil(margin / voxel_size))
    lo, hi = cloud.bounds
    if origin is None:
        anchor = lo - margin_cells * voxel_size
    else:
        anchor = np.asarray(origin, dtype=np.float64)
        if (anchor > lo + 1e-12).any():
            raise ValueError("explicit origin must not exceed the cloud minimum")
    dims = tuple(int(d) for d in
                 np.floor((hi - anchor) / voxel_size).astype(np.int64)
                 + 1 + margin_cells)
    origin = anchor
    occ = np.zeros(dims, dtype=bool)
    idx = np.floor((cloud.points - origin) / voxel_size).astype(np.int64)
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    if margin_cells > 0:
        occ = ndimage.binary_dilation(
            occ, structure=ndimage.generate_binary_structure(3, 1),
            iterations=margin_cells,
        )
    return VoxelGrid(origin=origin, voxel_size=voxel_size, dims=dims, occupancy=occ)


def bev_project(grid: VoxelGrid, min_height: float = 0.0) -> BevGrid:
    """Flatten a voxel grid onto the ground plane, keeping column max heights.

    ``min_height`` ignores voxels below that height over the grid base,
    which keeps terrain surface points from fusing every structure into
    one component: only columns occupied above the band count.
    """
    k_min = int(np.floor(min_height / grid.voxel_size))
    occ = grid.occupancy.copy()
    if k_min > 0:
        occ[:, :, :k_min] = False
    occupied = occ.any(axis=2)
    # Highest occupied z index per column, as height above the grid base.
    ks = np.arange(grid.dims[2], dtype=np.int64)
    top_index = np.where(occ, ks[None, None, :], -1).max(axis=2)
    heights = np.where(occupied, (top_index + 1) * grid.voxel_size, 0.0)
    return BevGrid(
        origin=grid.origin[:2].copy(),
        cell_size=grid.voxel_size,
        dims=(grid.dims[0], grid.dims[1]),
        occupancy=occupied,
        max_height=heights,
        base_z=float(grid.origin[2]),
    )


def mark_vegetation(bev: BevGrid, centers: list[tuple[float, float]],
                    radius: float) -> BevGrid:
    """Return a copy of the BEV grid with cells near tree centers flagged."""
    veg = np.zeros(bev.dims, dtype=bool) if bev.vegetation is None else bev.vegetation.copy()
    xs = (np.arange(bev.dims[0]) + 0.5) * bev.cell_size + bev.origin[0]
    ys = (np.arange(bev.dims[1]) + 0.5) * bev.cell_size + bev.origin[1]
    for cx, cy in centers:
        d2 = (xs[:, None] - cx) ** 2 + (ys[None, :] - cy) ** 2
        veg |= d2 <= radius * radius
    return BevGrid(
        origin=bev.origin, cell_size=bev.cell_size, dims=bev.dims,
        occupancy=bev.occupancy, max_height=bev.max_height,
        base_z=bev.base_z, vegetation=veg,
    )


def is_free(grid: VoxelGrid, p: Point3) -> bool:
    """True iff p maps to an in-bounds, unoccupied voxel (out of bounds is not free)."""
    size = grid.voxel_size
    i = math.floor((p.x - grid.origin[0]) / size)
    if not 0 <= i < grid.dims[0]:
        return False
    j = math.floor((p.y - grid.origin[1]) / size)
    if not 0 <= j < grid.dims[1]:
        return False
    k = math.floor((p.z - grid.origin[2]) / size)
    if not 0 <= k < grid.dims[2]:
        return False
    return not grid.occupancy[i, j, k]


def traverse_coords(grid: VoxelGrid, ax: float, ay: float, az: float,
                    bx_: float, by_: float, bz_: float,
                    ) -> Iterator[tuple[int, int, int]]:
    """Yield every voxel cell intersected by the segment, in order.

    Amanatides-Woo 3D DDA; cells are yielded whether or not they are in
    bounds, so callers decide how to treat boundary exits. Ties pick the
    x axis first, then y, then z.
    """
    size = grid.voxel_size
    ox, oy, oz = float(grid.origin[0]), float(grid.origin[1]), float(grid.origin[2])
    ix = math.floor((ax - ox) / size)
    iy = math.floor((ay - oy) / size)
    iz = math.floor((az - oz) / size)
    bx = math.floor((bx_ - ox) / size)
    by = math.floor((by_ - oy) / size)
    bz = math.floor((bz_ - oz) / size)
    yield (ix, iy, iz)
    if ix == bx and iy == by and iz == bz:
        return
    dx, dy, dz = bx_ - ax, by_ - ay, bz_ - az
    inf = math.inf
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    sz = 1 if dz > 0 else -1
    if dx:
        tmx = (ox + (ix + (dx > 0)) * size - ax) / dx
        tdx = size / abs(dx)
    else:
        tmx, tdx = inf, inf
    if dy:
        tmy = (oy + (iy + (dy > 0)) * size - ay) / dy
        tdy = size / abs(dy)
    else:
        tmy, tdy = inf, inf
    if dz:
        tmz = (oz + (iz + (dz > 0)) * size - az) / dz
        tdz = size / abs(dz)
    else:
        tmz, tdz = inf, inf
    max_steps = abs(bx - ix) + abs(by - iy) + abs(bz - iz) + 3
    for _ in range(max_steps):
        if tmx <= tmy and tmx <= tmz:
            ix += sx
            tmx += tdx
        elif tmy <= tmz:
            iy += sy
            tmy += tdy
        else:
            iz += sz
            tmz += tdz
        yield (ix, iy, iz)
        if ix == bx and iy == by and iz == bz:
            return
    # Step budget exhausted (float tie pathologies); cover the endpoint cell.
    yield (bx, by, bz)


def traverse_segment(grid: VoxelGrid, a: Point3, b: Point3) -> Iterator[tuple[int, int, int]]:
    return traverse_coords(grid, a.x, a.y, a.z, b.x, b.y, b.z)


def segment_free_coords(grid: VoxelGrid, ax: float, ay: float, az: float,
                        bx: float, by: float, bz: float) -> bool:
    """Allocation-free variant of segment_free for search inner loops."""
    nx, ny, nz = grid.dims
    occ = grid.occupancy
    for i, j, k in traverse_coords(grid, ax, ay, az, bx, by, bz):
        if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz) or occ[i, j, k]:
            return False
    return True


def segment_free(grid: VoxelGrid, a: Point3, b: Point3) -> bool:
    """True iff every voxel intersected by segment a->b is free and in bounds."""
    return segment_free_coords(grid, a.x, a.y, a.z, b.x, b.y, b.z)


def save_grid(grid: VoxelGrid, path: str | Path) -> None:
    """Binary export: little-endian header then the packed occupancy bits."""
    packed = np.packbits(grid.occupancy.reshape(-1).astype(np.uint8))
    with Path(path).open("wb") as fh:
        fh.write(_GRID_HEADER.pack(*grid.origin, grid.voxel_size, *grid.dims))
        fh.write(packed.tobytes())


def load_grid(path: str | Path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _GRID_HEADER.size:
        raise ValueError(f"{path}: truncated grid file")
    ox, oy, oz, size, nx, ny, nz = _GRID_HEADER.unpack_from(raw)
    n_cells = nx * ny * nz
    bits = np.unpackbits(np.frombuffer(raw[_GRID_HEADER.size:], dtype=np.uint8))
    if len(bits) < n_cells:
        raise ValueError(f"{path}: occupancy payload too short")
    occ = bits[:n_cells].astype(bool).reshape((nx, ny, nz))
    return VoxelGrid(origin=np.array([ox, oy, oz]), voxel_size=size,
                     dims=(int(nx), int(ny), int(nz)), occupancy=occ)


def grid_debug_dump(grid: VoxelGrid) -> str:
    """Lossless JSON form, mainly for diffing small grids in tests."""
    occupied = np.argwhere(grid.occupancy)
    doc = {
        "origin": [float(v) for v in grid.origin],
        "voxel_size": grid.voxel_size,
        "dims": list(grid.dims),
        "occupied_cells": occupied.tolist(),
    }
    return json.dumps(doc, separators=(",", ":"))


def grid_from_debug_dump(text: str) -> VoxelGrid:
    doc = json.loads(text)
    dims = tuple(doc["dims"])
    occ = np.zeros(dims, dtype=bool)
    for i, j, k in doc["occupied_cells"]:
        occ[i, j, k] = True
    return VoxelGrid(origin=np.array(doc["origin"], dtype=np.float64),
                     voxel_size=float(doc["voxel_size"]), dims=dims, occupancy=occ)
