import numpy as np
import pytest

from orchardgraph.graph import AnchorError, multi_source_costs
from orchardgraph.pointcloud import GROUND_ID, UNKNOWN_ID, PointCloud, TrunkPoint
from orchardgraph.scene import GraphParams, prepare_scene
from orchardgraph.segment import (closest_trunk_baseline, closest_trunk_ids, segment_scene, segment_trees,
                                  sorted_trunks)


def test_single_trunk_matches_baseline(small_orchard):
    cloud = small_orchard.cloud
    trunk = small_orchard.trunks[:1]
    seg = segment_trees(cloud, trunk)
    base = closest_trunk_baseline(cloud, trunk)
    assert np.array_equal(seg, base)
    assert set(np.unique(seg)) <= {GROUND_ID, 1}


def test_label_set(small_orchard):
    seg = segment_trees(small_orchard.cloud, small_orchard.trunks, fallback=False)
    assert set(np.unique(seg)) <= {GROUND_ID, UNKNOWN_ID, 1, 2}


def test_two_separate_trees(small_orchard):
    from orchardgraph.metrics import score_segmentation

    seg = segment_trees(small_orchard.cloud, small_orchard.trunks)
    assert score_segmentation(seg, small_orchard.cloud.tree_id) >= 0.95


def test_assignment_is_cost_optimal(small_orchard):
    scene = prepare_scene(small_orchard.cloud, GraphParams())
    seg = segment_scene(scene, small_orchard.trunks, fallback=False)
    per_trunk = np.vstack([multi_source_costs(scene.graph, [a]) for a in seg.anchors])
    ids = np.array([t.tree_id for t in seg.trunks])
    reached = seg.node_labels != UNKNOWN_ID
    own = per_trunk[np.searchsorted(ids, seg.node_labels[reached]), np.flatnonzero(reached)]
    assert (own <= per_trunk[:, reached].min(axis=0)).all()


def test_fallback_fills_orphans():
    # a detached blob far from the trunk's component
    rng = np.random.default_rng(1)
    post = np.column_stack([np.full(30, 0.05), np.full(30, 0.05), np.linspace(0.2, 2.0, 30)])
    blob = rng.uniform(3, 3.3, (30, 3))
    ground = np.column_stack([rng.uniform(-1, 4, (400, 2)), np.zeros(400)])
    cloud = PointCloud(np.vstack([ground, post, blob]))
    trunks = [TrunkPoint((0.05, 0.05, 0.2), 4)]
    strict = segment_trees(cloud, trunks, fallback=False)
    assert (strict[-30:] == UNKNOWN_ID).all()
    assert (strict[400:430] == 4).all()
    loose = segment_trees(cloud, trunks, fallback=True)
    assert (loose[-30:] == 4).all()


def test_trunk_without_node_raises(small_orchard):
    with pytest.raises(AnchorError, match="trunk 9"):
        segment_trees(small_orchard.cloud, [TrunkPoint((500, 500, 0), 9)])


def test_trunk_ids_validated():
    with pytest.raises(ValueError):
        sorted_trunks([TrunkPoint((0, 0, 0), 1), TrunkPoint((1, 0, 0), 1)])
    with pytest.raises(ValueError):
        sorted_trunks([TrunkPoint((0, 0, 0), 0)])


def test_equidistant_goes_to_lower_id():
    trunks = [TrunkPoint((2, 0, 0), 5), TrunkPoint((-2, 0, 0), 3)]
    assert closest_trunk_ids([[0, 0, 0], [1, 0, 0]], trunks).tolist() == [3, 5]


def test_baseline_matches_brute_force(rng):
    pts = rng.uniform(0, 10, (500, 3))
    trunks = [TrunkPoint(tuple(p), i + 1) for i, p in enumerate(rng.uniform(0, 10, (6, 3)))]
    ground = rng.random(500) < 0.2
    labels = closest_trunk_baseline(PointCloud(pts), trunks, ground)
    tp = np.array([t.position for t in trunks])
    expect = np.argmin(((pts[:, None] - tp[None]) ** 2).sum(axis=2), axis=1) + 1
    expect[ground] = GROUND_ID
    assert np.array_equal(labels, expect)


def test_baseline_single_trunk(rng):
    labels = closest_trunk_baseline(PointCloud(rng.normal(size=(50, 3))), [TrunkPoint((0, 0, 0), 2)],
                                    np.zeros(50, bool))
    assert (labels == 2).all()
    with pytest.raises(ValueError):
        closest_trunk_baseline(PointCloud(np.zeros((1, 3))), [])
