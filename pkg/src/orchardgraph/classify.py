"""Woody/leafy separation from shortest-path participation.

Paths from a trunk to every canopy node funnel through the trunk and the
main branches, so nodes on woody structure appear in many paths while leaf
nodes sit near path ends.  The per-node participation count is turned into
a log-ratio score, smoothed over a neighbourhood of each point and
thresholded.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .graph import PathAggregate, TreeGraph, aggregate_paths
from .pointcloud import Matter, PointCloud

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.216
DEFAULT_SMOOTHING = 0.3


def scores_from_counts(path_count) -> np.ndarray:
    """``log(p_x) / log(p_M)`` per node; 0 where ``p_x`` is 0 or ``p_M <= 1``."""
    p = np.asarray(path_count, dtype=np.float64)
    p_max = p.max() if len(p) else 0.0
    if p_max <= 1:
        if len(p):
            logger.warning("classify: maximum path count is %g; every score is 0", p_max)
        return np.zeros(len(p))
    out = np.zeros(len(p))
    pos = p > 0
    out[pos] = np.log(p[pos]) / np.log(p_max)
    return out


def score_matter(graph: TreeGraph, trunks=None, aggregate: Optional[PathAggregate] = None,
                 anchor_radius: float = 0.5, workers: int = 1) -> np.ndarray:
    """Participation score of every graph node.

    Counts are the per-node maximum over trunks of the number of canonical
    trunk-to-node paths through it.  Pass ``aggregate`` to reuse a search
    that already ran (segmentation uses the same one).

    Args:
        graph: the canopy graph.
        trunks: trunk points used as search sources; ignored with ``aggregate``.
        aggregate: precomputed aggregation from the trunk anchors to all nodes.
        anchor_radius: maximum trunk-to-node distance when anchoring.
        workers: parallel searches.

    Returns:
        Array of scores in [0, 1], one per node.
    """
    if aggregate is None:
        if not trunks:
            raise ValueError("score_matter needs trunks or an aggregate")
        from .segment import anchor_trunks, sorted_trunks

        anchors = anchor_trunks(graph, sorted_trunks(trunks), anchor_radius)
        aggregate = aggregate_paths(graph, anchors, workers=workers)
    return scores_from_counts(aggregate.path_count)


def smooth_scores(points, node_positions, node_scores, radius: float = DEFAULT_SMOOTHING,
                  workers: int = 1, chunk: int = 65536) -> np.ndarray:
    """Mean node score within ``radius`` of each point; nan where no node is in range.

    Points are processed in independent chunks (in parallel with
    ``workers > 1``) that write disjoint slices of the result.
    """
    if radius <= 0:
        raise ValueError("smoothing radius must be positive")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    node_scores = np.asarray(node_scores, dtype=np.float64)
    out = np.full(len(points), np.nan)
    if len(points) == 0 or len(node_scores) == 0:
        return out
    node_tree = cKDTree(node_positions)

    def run(lo):
        block = points[lo:lo + chunk]
        pairs = node_tree.sparse_distance_matrix(cKDTree(block), radius, output_type="ndarray")
        n = len(block)
        total = np.bincount(pairs["j"], weights=node_scores[pairs["i"]], minlength=n)
        count = np.bincount(pairs["j"], minlength=n)
        hit = count > 0
        out[lo:lo + n][hit] = total[hit] / count[hit]

    starts = range(0, len(points), chunk)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return out


@dataclass
class MatterClassification:
    matter: np.ndarray  # per point, Matter codes
    smoothed: np.ndarray  # per point score, nan for ground and out-of-range points


def classify_matter(cloud: PointCloud, node_positions, node_scores, ground_mask=None,
                    threshold: float = DEFAULT_THRESHOLD,
                    smoothing_radius: float = DEFAULT_SMOOTHING, workers: int = 1) -> MatterClassification:
    """Label each point woody or leafy by its smoothed score.

    Ground points (``ground_mask``) keep the ground class and points with no
    node within ``smoothing_radius`` are unknown.
    """
    n = len(cloud)
    ground = np.zeros(n, dtype=bool) if ground_mask is None else np.asarray(ground_mask, dtype=bool)
    todo = np.flatnonzero(~ground)
    smoothed = np.full(n, np.nan)
    smoothed[todo] = smooth_scores(cloud.xyz[todo], node_positions, node_scores, smoothing_radius, workers)
    matter = np.full(n, Matter.UNKNOWN, dtype=np.uint8)
    matter[ground] = Matter.GROUND
    valid = ~np.isnan(smoothed)
    matter[valid] = np.where(smoothed[valid] >= threshold, Matter.WOODY, Matter.LEAFY)
    unknown = int((~ground & ~valid).sum())
    if unknown:
        logger.info("classify: %d points have no node within %g m", unknown, smoothing_radius)
    return MatterClassification(matter, smoothed)


@dataclass(frozen=True)
class Calibration:
    woody_mean: float
    woody_std: float
    leafy_mean: float
    leafy_std: float
    midpoint: float
    best_f1_threshold: float
    best_f1: float
    n_woody: int
    n_leafy: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def best_f1_threshold(scores, is_woody) -> tuple:
    """Threshold maximising woody F1 when woody means ``score >= threshold``.

    Returns:
        ``(threshold, f1)``; the lowest such threshold wins ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_woody = np.asarray(is_woody, dtype=bool)
    n_pos = int(is_woody.sum())
    if len(scores) == 0 or n_pos == 0:
        return float("nan"), 0.0
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(is_woody[order])
    k = np.arange(1, len(s) + 1)
    # only the last index of each run of equal scores is a realisable cut
    last = np.append(s[1:] != s[:-1], True)
    f1 = 2 * tp / (k + n_pos)
    f1 = np.where(last, f1, -1.0)
    best = f1.max()
    cand = np.flatnonzero(f1 == best)
    i = cand[-1]
    return float(s[i]), float(best)


def calibrate(smoothed, truth_matter) -> Calibration:
    """Per-class score statistics on labelled points and two threshold suggestions."""
    smoothed = np.asarray(smoothed, dtype=np.float64)
    truth = np.asarray(truth_matter)
    ok = ~np.isnan(smoothed) & np.isin(truth, (Matter.WOODY, Matter.LEAFY))
    s, woody = smoothed[ok], truth[ok] == Matter.WOODY
    if woody.sum() == 0 or (~woody).sum() == 0:
        raise ValueError("calibration needs both woody and leafy points with scores")
    wm, lm = float(s[woody].mean()), float(s[~woody].mean())
    thr, f1 = best_f1_threshold(s, woody)
    return Calibration(wm, float(s[woody].std()), lm, float(s[~woody].std()), (wm + lm) / 2,
                       thr, f1, int(woody.sum()), int((~woody).sum()))
