"""Scoring protocols for trunk detection, segmentation and classification."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .pointcloud import Matter, trunk_positions

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrunkMatch:
    tp: int
    fp: int
    fn: int
    mean_distance: float  # over true positives; nan when there are none
    precision: float
    recall: float
    f1: float
    pairs: tuple  # (detected index, truth index, distance)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("tp", "fp", "fn", "mean_distance", "precision", "recall", "f1")}


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def match_trunks(detected, truth, max_dist: float = 1.0) -> TrunkMatch:
    """One-to-one greedy matching of detections to ground-truth trunks.

    Candidate pairs are taken in order of increasing 3D distance (index
    order breaks ties); a pair is accepted when both ends are still free and
    the distance is at most ``max_dist``.
    """
    if max_dist <= 0:
        raise ValueError("max_dist must be positive")
    d_pos = trunk_positions(detected) if not isinstance(detected, np.ndarray) else detected.reshape(-1, 3)
    t_pos = trunk_positions(truth) if not isinstance(truth, np.ndarray) else truth.reshape(-1, 3)
    pairs = []
    if len(d_pos) and len(t_pos):
        dist = cdist(d_pos, t_pos)
        di, ti = np.nonzero(dist <= max_dist)
        order = np.lexsort((ti, di, dist[di, ti]))
        used_d, used_t = set(), set()
        for k in order:
            a, b = int(di[k]), int(ti[k])
            if a in used_d or b in used_t:
                continue
            used_d.add(a)
            used_t.add(b)
            pairs.append((a, b, float(dist[a, b])))
    tp = len(pairs)
    fp = len(d_pos) - tp
    fn = len(t_pos) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    mean_d = float(np.mean([p[2] for p in pairs])) if pairs else float("nan")
    return TrunkMatch(tp, fp, fn, mean_d, precision, recall, f1, tuple(pairs))


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def homogeneity_completeness_v(pred, truth):
    """Homogeneity, completeness and v-measure (natural-log entropies).

    A vanishing class (or cluster) entropy makes the corresponding score 1.
    """
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if len(pred) != len(truth):
        raise ValueError("label arrays differ in length")
    if len(pred) == 0:
        raise ValueError("v-measure of an empty labelling is undefined")
    _, t_inv = np.unique(truth, return_inverse=True)
    _, p_inv = np.unique(pred, return_inverse=True)
    t_inv, p_inv = t_inv.ravel(), p_inv.ravel()
    cont = np.zeros((t_inv.max() + 1, p_inv.max() + 1), dtype=np.int64)
    np.add.at(cont, (t_inv, p_inv), 1)
    n = float(len(pred))

    h_truth = _entropy(cont.sum(axis=1))
    h_pred = _entropy(cont.sum(axis=0))
    nz = cont > 0
    joint = cont[nz] / n
    pt = (cont.sum(axis=1)[:, None] / n * np.ones_like(cont))[nz]
    pp = (cont.sum(axis=0)[None, :] / n * np.ones_like(cont))[nz]
    h_truth_given_pred = float(-(joint * np.log(joint / pp)).sum())
    h_pred_given_truth = float(-(joint * np.log(joint / pt)).sum())

    h = 1.0 if h_truth == 0 else 1.0 - h_truth_given_pred / h_truth
    c = 1.0 if h_pred == 0 else 1.0 - h_pred_given_truth / h_pred
    v = 0.0 if h + c == 0 else 2 * h * c / (h + c)
    return h, c, v


def v_measure(pred, truth) -> float:
    return homogeneity_completeness_v(pred, truth)[2]


def binary_f1(pred, truth, positive=Matter.WOODY) -> float:
    """F1 of the ``positive`` class; 1.0 when neither side has any positives."""
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if len(pred) != len(truth):
        raise ValueError("label arrays differ in length")
    p = pred == positive
    t = truth == positive
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    if tp + fp + fn == 0:
        logger.warning("no positive labels in prediction or truth; F1 defined as 1")
        return 1.0
    return f1_from_counts(tp, fp, fn)


def segmentation_mask(pred_tree, truth_tree) -> np.ndarray:
    """Points that count towards segmentation scoring (no ground, no unknown)."""
    pred_tree = np.asarray(pred_tree)
    truth_tree = np.asarray(truth_tree)
    return (truth_tree > 0) & (pred_tree > 0)


def classification_mask(pred_matter, truth_matter) -> np.ndarray:
    """Points that count towards woody/leafy scoring."""
    ok = (Matter.LEAFY, Matter.WOODY)
    return np.isin(pred_matter, ok) & np.isin(truth_matter, ok)


def score_segmentation(pred_tree, truth_tree) -> float:
    m = segmentation_mask(pred_tree, truth_tree)
    return v_measure(np.asarray(pred_tree)[m], np.asarray(truth_tree)[m])


def score_classification(pred_matter, truth_matter) -> float:
    m = classification_mask(pred_matter, truth_matter)
    return binary_f1(np.asarray(pred_matter)[m], np.asarray(truth_matter)[m])
