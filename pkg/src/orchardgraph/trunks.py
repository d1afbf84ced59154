"""Prior-free trunk location from a coarse graph.

Canopy nodes act as search sources; every ground node is scored with the
cheapest path cost from any source.  Paths from a canopy reach the ground
through the trunk, so each trunk base shows up as a local minimum of that
score over the ground.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .graph import build_graph, multi_source_costs
from .pointcloud import PointCloud, TrunkPoint
from .preprocess import GroundPartition, remove_ground, voxelize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrunkDetectionConfig:
    coarse_voxel: float = 0.4
    source_spacing: float = 2.0
    minimum_radius: float = 1.0
    merge_distance: float = 1.0
    edge_radius: Optional[float] = None  # default: coarse voxel diagonal
    min_source_height: float = 1.0
    ground_radius: float = 1.0
    ground_tolerance: float = 0.15
    ground_band: Optional[float] = None  # default: one coarse voxel

    def __post_init__(self):
        for name in ("coarse_voxel", "source_spacing", "minimum_radius", "merge_distance",
                     "ground_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.edge_radius is not None and self.edge_radius <= 0:
            raise ValueError("edge_radius must be positive")

    @property
    def node_ground_band(self) -> float:
        return self.ground_band if self.ground_band is not None else self.coarse_voxel

    @property
    def coarse_edge_radius(self) -> float:
        return self.edge_radius if self.edge_radius is not None else float(np.sqrt(3.0) * self.coarse_voxel)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["edge_radius"] = self.coarse_edge_radius
        d["ground_band"] = self.node_ground_band
        return d


@dataclass
class TrunkDetection:
    """Detected trunks plus the intermediate state behind them."""

    trunks: list
    ground_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    ground_scores: np.ndarray = field(default_factory=lambda: np.empty(0))
    sources: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    minima: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    positions: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    diagnostic: str = ""


def spaced_subsample(points: np.ndarray, spacing: float) -> np.ndarray:
    """Greedy subsample keeping points at least ``spacing`` apart.

    Points are visited in the given order; the result lists kept indices.
    """
    buckets: dict = {}
    kept = []
    offsets = list(itertools.product((-1, 0, 1), repeat=3))
    for i, p in enumerate(np.asarray(points, dtype=np.float64)):
        key = tuple(np.floor(p / spacing).astype(np.int64).tolist())
        near = (j for o in offsets for j in buckets.get((key[0] + o[0], key[1] + o[1], key[2] + o[2]), ()))
        if any(((points[j] - p) ** 2).sum() < spacing**2 for j in near):
            continue
        buckets.setdefault(key, []).append(i)
        kept.append(i)
    return np.asarray(kept, dtype=np.int64)


def local_minima(pos: np.ndarray, score: np.ndarray, radius: float) -> np.ndarray:
    """Indices whose ``(score, index)`` is below every other within ``radius``."""
    finite = np.flatnonzero(np.isfinite(score))
    if len(finite) == 0:
        return finite
    tree = cKDTree(pos[finite])
    nbrs = tree.query_ball_point(pos[finite], radius)
    out = []
    for a, lst in enumerate(nbrs):
        i = finite[a]
        key = (score[i], i)
        if all(key < (score[finite[b]], finite[b]) for b in lst if b != a):
            out.append(i)
    return np.asarray(out, dtype=np.int64)


def merge_close(pos: np.ndarray, score: np.ndarray, candidates: np.ndarray, distance: float) -> np.ndarray:
    """Keep the best-scoring candidate of every group closer than ``distance``."""
    order = candidates[np.lexsort((candidates, score[candidates]))]
    kept = []
    for i in order:
        if all(np.linalg.norm(pos[i] - pos[k]) > distance for k in kept):
            kept.append(int(i))
    return np.asarray(kept, dtype=np.int64)


def detect_trunks(cloud: PointCloud, config: TrunkDetectionConfig = TrunkDetectionConfig(),
                  partition: Optional[GroundPartition] = None) -> TrunkDetection:
    """Locate one trunk point per tree without any layout prior.

    The cloud (ground included) is voxelised relative to its own minimum
    corner so that the result moves rigidly with the input.  A coarse node is
    a ground node if any of its points is ground or if its centroid is within
    ``ground_band`` of the lateral ground floor; the second rule keeps the
    ground layer connected when noise scatters the terrain points.
    """
    if len(cloud) == 0:
        return TrunkDetection([], diagnostic="empty cloud")
    if partition is None:
        partition = remove_ground(cloud, config.ground_radius, config.ground_tolerance)
    origin = cloud.xyz.min(axis=0)
    shifted = PointCloud(cloud.xyz - origin)
    grid = voxelize(shifted, None, config.coarse_voxel)
    graph = build_graph(grid, config.coarse_edge_radius, "none")

    is_ground_pt = partition.mask()
    ground_cell = np.zeros(len(grid), dtype=bool)
    ground_cell[grid.point_cell[is_ground_pt]] = True
    pos = grid.positions + origin
    ground_cell |= pos[:, 2] - partition.ground_height(pos[:, :2]) <= config.node_ground_band
    ground_nodes = np.flatnonzero(ground_cell)
    canopy_nodes = np.flatnonzero(~ground_cell)
    if len(ground_nodes) == 0 or len(canopy_nodes) == 0:
        msg = "ground partition is trivial; no ground/canopy interface to search"
        logger.warning(msg)
        return TrunkDetection([], diagnostic=msg, positions=pos)

    height = pos[canopy_nodes, 2] - partition.ground_height(pos[canopy_nodes, :2])
    candidates = canopy_nodes[height >= config.min_source_height]
    sources = candidates[spaced_subsample(pos[candidates], config.source_spacing)]
    if len(sources) == 0:
        msg = f"no canopy node at least {config.min_source_height} m above ground"
        logger.warning(msg)
        return TrunkDetection([], ground_nodes=ground_nodes, diagnostic=msg, positions=pos)

    cost = multi_source_costs(graph, sources)
    score = cost[ground_nodes]
    if not np.isfinite(score).any():
        msg = "no ground node is reachable from any source"
        logger.warning(msg)
        return TrunkDetection([], ground_nodes, score, sources, diagnostic=msg, positions=pos)

    gpos = pos[ground_nodes]
    minima = local_minima(gpos, score, config.minimum_radius)
    kept = merge_close(gpos, score, minima, config.merge_distance)
    trunks = [TrunkPoint(tuple(pos[ground_nodes[k]]), n + 1) for n, k in enumerate(kept)]
    logger.info("trunks: %d sources, %d minima, %d trunks", len(sources), len(minima), len(trunks))
    return TrunkDetection(trunks, ground_nodes, score, sources, ground_nodes[minima], pos)
