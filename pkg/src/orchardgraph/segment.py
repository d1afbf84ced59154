"""Individual tree segmentation by shortest path to a trunk."""

from __future__ import annotations

import logging
from dataclasses import dataclass
import numpy as np

from .graph import PathAggregate, TreeGraph, aggregate_paths, anchor_points
from .pointcloud import GROUND_ID, UNKNOWN_ID, PointCloud, trunk_positions
from .preprocess import GroundPartition, propagate_to_points, remove_ground
from .scene import GraphParams, Scene, prepare_scene

logger = logging.getLogger(__name__)


def sorted_trunks(trunks) -> list:
    """Trunks ordered by tree id, the order used for source tie-breaking."""
    trunks = sorted(trunks, key=lambda t: t.tree_id)
    ids = [t.tree_id for t in trunks]
    if len(set(ids)) != len(ids):
        raise ValueError("trunk tree ids must be unique")
    if any(i <= 0 for i in ids):
        raise ValueError("trunk tree ids must be positive (0 is ground, -1 unknown)")
    return trunks


def anchor_trunks(graph: TreeGraph, trunks, radius: float) -> np.ndarray:
    """Graph node for each trunk (nearest node within ``radius``)."""
    return anchor_points(graph, trunk_positions(trunks), radius, names=[t.tree_id for t in trunks])


@dataclass
class Segmentation:
    labels: np.ndarray  # per point: tree id, 0 ground, -1 unknown
    node_labels: np.ndarray  # per graph node
    aggregate: PathAggregate
    anchors: np.ndarray
    trunks: list


def assign_nodes(graph: TreeGraph, aggregate: PathAggregate, trunks, fallback: bool = True) -> np.ndarray:
    """Tree id of the cheapest-path trunk for every node.

    Unreached nodes get -1, or with ``fallback`` the id of the nearest trunk
    in straight-line distance.
    """
    ids = np.array([t.tree_id for t in trunks], dtype=np.int64)
    labels = np.where(aggregate.best_source >= 0, ids[np.maximum(aggregate.best_source, 0)], UNKNOWN_ID)
    orphans = np.flatnonzero(labels == UNKNOWN_ID)
    if fallback and len(orphans):
        labels[orphans] = closest_trunk_ids(graph.positions[orphans], trunks)
        logger.info("segment: %d of %d nodes assigned by closest trunk", len(orphans), len(labels))
    return labels


def segment_scene(scene: Scene, trunks, fallback: bool = True, anchor_radius: float = 0.5,
                  workers: int = 1) -> Segmentation:
    trunks = sorted_trunks(trunks)
    if not trunks:
        raise ValueError("segmentation needs at least one trunk")
    anchors = anchor_trunks(scene.graph, trunks, anchor_radius)
    agg = aggregate_paths(scene.graph, anchors, workers=workers)
    node_labels = assign_nodes(scene.graph, agg, trunks, fallback)
    labels = propagate_to_points(scene.grid, node_labels, fill=UNKNOWN_ID).astype(np.int32)
    labels[scene.partition.ground_ids] = GROUND_ID
    return Segmentation(labels, node_labels, agg, anchors, trunks)


def segment_trees(cloud: PointCloud, trunks, voxel_size: float = 0.1, edge_radius: float = 0.15,
                  weighting: str = "none", fallback: bool = True, anchor_radius: float = 0.5,
                  ground_radius: float = 1.0, ground_tolerance: float = 0.15,
                  workers: int = 1) -> np.ndarray:
    """Per-point tree ids: 0 for ground, -1 for unreached points without fallback.

    Each trunk is anchored to the nearest graph node within ``anchor_radius``
    and every node goes to the trunk with the cheapest path (lower tree id on
    ties).
    """
    params = GraphParams(voxel_size=voxel_size, edge_radius=edge_radius, weighting=weighting,
                         ground_radius=ground_radius, ground_tolerance=ground_tolerance)
    scene = prepare_scene(cloud, params)
    return segment_scene(scene, trunks, fallback, anchor_radius, workers).labels


def closest_trunk_ids(points: np.ndarray, trunks) -> np.ndarray:
    """Tree id of the nearest trunk; equidistant points go to the lower id."""
    trunks = sorted_trunks(trunks)
    ids = np.array([t.tree_id for t in trunks], dtype=np.int64)
    pos = trunk_positions(trunks)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    best = np.zeros(len(points), dtype=np.int64)
    best_d = np.full(len(points), np.inf)
    for k in range(len(trunks)):
        d = ((points - pos[k]) ** 2).sum(axis=1)
        better = d < best_d
        best[better] = k
        best_d[better] = d[better]
    return ids[best]


def closest_trunk_baseline(cloud: PointCloud, trunks, ground=None) -> np.ndarray:
    """Assign every non-ground point to its nearest trunk.

    ``ground`` is a :class:`GroundPartition`, a boolean mask, or ``None`` to
    run :func:`remove_ground` with default parameters.
    """
    if not trunks:
        raise ValueError("baseline needs at least one trunk")
    if ground is None:
        ground = remove_ground(cloud)
    mask = ground.mask() if isinstance(ground, GroundPartition) else np.asarray(ground, dtype=bool)
    labels = closest_trunk_ids(cloud.xyz, trunks).astype(np.int32)
    labels[mask] = GROUND_ID
    return labels
