"""Shared preprocessing: ground partition, voxel grid and graph in one bundle."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from .enrich import FeatureTable, compute_features
from .graph import TreeGraph, build_graph
from .pointcloud import PointCloud
from .preprocess import GroundPartition, VoxelGrid, remove_ground, voxelize


@dataclass(frozen=True)
class GraphParams:
    ground_radius: float = 1.0
    ground_tolerance: float = 0.15
    voxel_size: float = 0.1
    edge_radius: float = 0.15
    weighting: str = "none"
    neighborhood: Optional[float] = None  # enrichment support radius, default 3 voxels

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scene:
    cloud: PointCloud
    params: GraphParams
    partition: GroundPartition
    grid: VoxelGrid
    graph: TreeGraph
    features: Optional[FeatureTable] = None


def prepare_scene(cloud: PointCloud, params: GraphParams = GraphParams(),
                  partition: Optional[GroundPartition] = None) -> Scene:
    """Remove ground, voxelise the canopy and build the search graph."""
    if partition is None:
        partition = remove_ground(cloud, params.ground_radius, params.ground_tolerance)
    grid = voxelize(cloud, partition.nonground_ids, params.voxel_size)
    if len(grid) == 0:
        raise ValueError("no canopy points left after ground removal")
    features = None
    if params.weighting == "cosine":
        features = compute_features(cloud, grid, params.neighborhood)
    graph = build_graph(grid, params.edge_radius, params.weighting, features)
    return Scene(cloud, params, partition, grid, graph, features)
