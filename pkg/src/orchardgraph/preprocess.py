"""Ground extraction by lateral local minima and voxel downsampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .pointcloud import PointCloud, UNKNOWN_ID

logger = logging.getLogger(__name__)

_NEIGHBOURS_2D = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]


@dataclass(frozen=True)
class GroundPartition:
    """Split of a cloud into terrain and canopy point ids.

    ``ground_height`` evaluates the lateral minimum surface used for the
    decision; points outside the sampled area get ``inf``.
    """

    ground_ids: np.ndarray
    nonground_ids: np.ndarray
    radius: float
    tolerance: float
    _origin: np.ndarray
    _cell_keys: np.ndarray
    _cell_floor: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.ground_ids) + len(self.nonground_ids)

    def mask(self) -> np.ndarray:
        """Boolean ground mask aligned with the cloud."""
        m = np.zeros(self.n_points, dtype=bool)
        m[self.ground_ids] = True
        return m

    def ground_height(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))[:, :2]
        ij = np.floor((xy - self._origin) / self.radius).astype(np.int64)
        keys = _pack2(ij[:, 0], ij[:, 1])
        pos = np.searchsorted(self._cell_keys, keys)
        pos = np.minimum(pos, len(self._cell_keys) - 1)
        found = self._cell_keys[pos] == keys
        out = np.full(len(xy), np.inf)
        out[found] = self._cell_floor[pos[found]]
        return out


def _pack2(i, j):
    # offset so that neighbour lookups at -1 stay non-negative
    return ((i + 1) << 32) | (j + 1)


def remove_ground(cloud: PointCloud, radius: float = 1.0, tolerance: float = 0.15) -> GroundPartition:
    """Mark points that sit within ``tolerance`` of the lateral local minimum.

    The minimum is taken over a 2D grid of ``radius``-sized columns anchored at
    the cloud's XY minimum, looking at the 3x3 block of columns around each
    point.  That block always covers the lateral disc of ``radius`` so the
    surface is never higher than the true disc minimum.
    """
    if len(cloud) == 0:
        raise ValueError("cannot remove ground from an empty cloud")
    if radius <= 0:
        raise ValueError("ground radius must be positive")
    xyz = cloud.xyz
    origin = xyz[:, :2].min(axis=0)
    ij = np.floor((xyz[:, :2] - origin) / radius).astype(np.int64)
    keys = _pack2(ij[:, 0], ij[:, 1])
    cell_keys, inverse = np.unique(keys, return_inverse=True)
    cell_min = np.full(len(cell_keys), np.inf)
    np.minimum.at(cell_min, inverse, xyz[:, 2])

    ci = (cell_keys >> 32) - 1
    cj = (cell_keys & 0xFFFFFFFF) - 1
    floor = cell_min.copy()
    for di, dj in _NEIGHBOURS_2D:
        if di == 0 and dj == 0:
            continue
        nk = _pack2(ci + di, cj + dj)
        pos = np.minimum(np.searchsorted(cell_keys, nk), len(cell_keys) - 1)
        hit = cell_keys[pos] == nk
        floor[hit] = np.minimum(floor[hit], cell_min[pos[hit]])

    is_ground = xyz[:, 2] <= floor[inverse] + tolerance
    ground_ids = np.flatnonzero(is_ground)
    nonground_ids = np.flatnonzero(~is_ground)
    logger.debug("ground: %d of %d points", len(ground_ids), len(cloud))
    return GroundPartition(ground_ids, nonground_ids, radius, tolerance, origin, cell_keys, floor)


@dataclass(frozen=True)
class VoxelGrid:
    """Cubic-cell partition of a set of point ids.

    Cells are stored in lexicographic ``(i, j, k)`` order; cell ``c`` owns the
    point ids ``point_ids[offsets[c]:offsets[c + 1]]`` (ascending).  The graph
    node for a cell sits at the mean of its members.
    """

    cell_size: float
    indices: np.ndarray  # (m, 3) int64
    positions: np.ndarray  # (m, 3) float64
    counts: np.ndarray  # (m,)
    offsets: np.ndarray  # (m + 1,)
    point_ids: np.ndarray  # member ids grouped by cell
    point_cell: np.ndarray  # cell of every cloud point, -1 when not voxelised
    n_cloud_points: int

    def __len__(self) -> int:
        return len(self.indices)

    def members(self, cell: int) -> np.ndarray:
        return self.point_ids[self.offsets[cell] : self.offsets[cell + 1]]

    def cell_of(self, ijk) -> int:
        """Row of cell ``(i, j, k)`` or -1."""
        ijk = np.asarray(ijk, dtype=np.int64)
        lo, hi = 0, len(self.indices)
        target = tuple(ijk)
        while lo < hi:
            mid = (lo + hi) // 2
            if tuple(self.indices[mid]) < target:
                lo = mid + 1
            else:
                hi = mid
        if lo < len(self.indices) and tuple(self.indices[lo]) == target:
            return lo
        return -1


def voxelize(cloud: PointCloud, ids=None, cell_size: float = 0.1) -> VoxelGrid:
    """Group the selected points into cubic cells of side ``cell_size``.

    Cell indices are ``floor(coord / cell_size)`` in the cloud's own frame.
    """
    if cell_size <= 0:
        raise ValueError("voxel size must be positive")
    n = len(cloud)
    ids = np.arange(n) if ids is None else np.sort(np.asarray(ids, dtype=np.int64))
    pts = cloud.xyz[ids]
    point_cell = np.full(n, -1, dtype=np.int64)
    if len(ids) == 0:
        empty3 = np.empty((0, 3))
        return VoxelGrid(cell_size, empty3.astype(np.int64), empty3, np.empty(0, np.int64),
                         np.zeros(1, np.int64), ids, point_cell, n)

    ijk = np.floor(pts / cell_size).astype(np.int64)
    lo = ijk.min(axis=0)
    span = ijk.max(axis=0) - lo + 1
    if float(span[0]) * float(span[1]) * float(span[2]) < 2**62:
        # a mixed-radix key preserves lexicographic order
        rel = ijk - lo
        key = (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
        _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
        cells = ijk[first]
    else:
        cells, inverse = np.unique(ijk, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    m = len(cells)
    counts = np.bincount(inverse, minlength=m)
    sums = np.column_stack([np.bincount(inverse, weights=pts[:, a], minlength=m) for a in range(3)])
    positions = sums / counts[:, None]

    order = np.argsort(inverse, kind="stable")
    offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    point_cell[ids] = inverse
    return VoxelGrid(cell_size, cells, positions, counts, offsets, ids[order], point_cell, n)


def propagate_to_points(grid: VoxelGrid, node_labels, fill=UNKNOWN_ID) -> np.ndarray:
    """Copy each cell's label onto its member points.

    ``node_labels`` is either an array with one entry per cell or a mapping
    from cell row to label; cells missing from a mapping, and points outside
    the grid, receive ``fill``.
    """
    if isinstance(node_labels, dict):
        dtype = np.result_type(np.asarray(fill), np.asarray(list(node_labels.values())))
        arr = np.full(len(grid), fill, dtype=dtype)
        for cell, label in node_labels.items():
            if not 0 <= cell < len(grid):
                raise KeyError(f"cell {cell} is not in the grid")
            arr[cell] = label
    else:
        arr = np.asarray(node_labels)
        if len(arr) != len(grid):
            raise ValueError(f"expected {len(grid)} node labels, got {len(arr)}")
    out = np.full(grid.n_cloud_points, fill, dtype=np.result_type(arr.dtype, np.asarray(fill)))
    inside = grid.point_cell >= 0
    out[inside] = arr[grid.point_cell[inside]]
    return out
