"""Voxel-graph shortest-path analysis of orchard LiDAR scans.

Trunk finding, individual tree segmentation and woody/leafy classification,
plus a labelled synthetic stand generator and the matching metrics.
"""

__version__ = "0.1.0"

from .classify import calibrate, classify_matter, score_matter, smooth_scores
from .enrich import compute_features, cosine_similarity
from .graph import TreeGraph, aggregate_paths, build_graph, shortest_path
from .metrics import binary_f1, match_trunks, score_classification, score_segmentation, v_measure
from .pipeline import AnalysisConfig, SweepSpec, analyze, sweep
from .pointcloud import Matter, PointCloud, SpatialIndex, TrunkPoint, read_cloud, read_trunks, write_cloud, write_trunks
from .preprocess import remove_ground, voxelize
from .scene import GraphParams, prepare_scene
from .segment import closest_trunk_baseline, segment_scene, segment_trees
from .synth import OrchardSpec, generate_orchard
from .trunks import TrunkDetectionConfig, detect_trunks

__all__ = [
    "AnalysisConfig", "GraphParams", "Matter", "OrchardSpec", "PointCloud", "SpatialIndex", "TreeGraph",
    "TrunkDetectionConfig", "TrunkPoint", "aggregate_paths", "analyze", "binary_f1", "build_graph",
    "calibrate", "classify_matter", "closest_trunk_baseline", "compute_features", "cosine_similarity",
    "detect_trunks", "generate_orchard", "match_trunks", "SweepSpec", "prepare_scene", "read_cloud", "read_trunks",
    "remove_ground", "score_classification", "score_matter", "score_segmentation", "segment_scene", "segment_trees",
    "shortest_path", "smooth_scores", "sweep", "v_measure", "voxelize", "write_cloud", "write_trunks",
]
