"""The nine acceptance criteria, each reporting one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are printed
again in the terminal summary.
"""

import json
import time

import numpy as np
import pytest

import oracles
from conftest import record
from orchardgraph import cli
from orchardgraph.classify import classify_matter, score_matter
from orchardgraph.enrich import point_set_descriptors
from orchardgraph.graph import aggregate_paths, graph_from_edges, shortest_path
from orchardgraph.metrics import binary_f1, homogeneity_completeness_v, match_trunks, score_classification, \
    score_segmentation, v_measure
from orchardgraph.pipeline import AnalysisConfig, analyze
from orchardgraph.pointcloud import TrunkPoint, write_cloud
from orchardgraph.scene import prepare_scene
from orchardgraph.segment import segment_scene
from orchardgraph.synth import OrchardSpec, generate_orchard
from orchardgraph.trunks import detect_trunks

SEEDS = range(8)
NOISE = (0.0, 0.05, 0.1)


def _segment_and_classify(orchard):
    scene = prepare_scene(orchard.cloud)
    seg = segment_scene(scene, orchard.trunks)
    scores = score_matter(scene.graph, aggregate=seg.aggregate)
    mc = classify_matter(orchard.cloud, scene.graph.positions, scores, scene.partition.mask())
    return (score_segmentation(seg.labels, orchard.cloud.tree_id),
            score_classification(mc.matter, orchard.cloud.matter))


@pytest.fixture(scope="module")
def noise_sweep():
    """v-measure and F1 per (noise, seed) on 2x4 stands at 6 m x 8 m, truth trunks."""
    t0 = time.perf_counter()
    out = {}
    for noise in NOISE:
        for seed in SEEDS:
            out[noise, seed] = _segment_and_classify(generate_orchard(OrchardSpec(noise=noise, seed=seed)))
    return out, time.perf_counter() - t0


def test_c1_shortest_path_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n_graphs, path_checks, count_checks = 0, 0, 0
    failures = []
    while n_graphs < 500:
        pos, edges, costs = oracles.random_graph(rng)
        n = len(pos)
        if not edges:
            continue
        n_graphs += 1
        g = graph_from_edges(pos, edges, costs)
        adj = oracles.adjacency(n, edges, costs)
        for s in range(n):
            ref = oracles.canonical_paths_from(n, adj, s)
            for t in range(n):
                for h in (True, False):
                    p = shortest_path(g, s, t, heuristic=h)
                    path_checks += 1
                    if p.cost != ref[t][0] or p.nodes != ref[t][1]:
                        failures.append(("path", n_graphs, s, t, h))
        sources = sorted(rng.choice(n, size=min(n, 3), replace=False).tolist())
        targets = np.flatnonzero(rng.uniform(size=n) < 0.7)
        agg = aggregate_paths(g, sources, targets)
        for k, s in enumerate(sources):
            expect = oracles.path_counts(n, adj, s, targets.tolist())
            count_checks += 1
            if agg.source_counts[k].tolist() != expect:
                failures.append(("counts", n_graphs, s))
        expect_max = np.max([oracles.path_counts(n, adj, s, targets.tolist()) for s in sources], axis=0)
        if agg.path_count.tolist() != expect_max.tolist():
            failures.append(("max", n_graphs))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    record("C1 shortest-path oracle", ok,
           f"{n_graphs} graphs, {path_checks} A*/uniform-cost paths, {count_checks} aggregations, "
           f"{len(failures)} mismatches, {elapsed:.1f}s (<60s)")
    assert not failures, failures[:5]
    assert elapsed < 60


def test_c2_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 51))
        truth = rng.integers(0, rng.integers(1, 6), n).tolist()
        pred = rng.integers(0, rng.integers(1, 6), n).tolist()
        got = homogeneity_completeness_v(pred, truth)
        ref = oracles.v_measure(pred, truth)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, ref)))
    checks = {
        "v(identical)=1": v_measure([0, 0, 1, 2, 2], [0, 0, 1, 2, 2]) == 1.0,
        "v(single cluster, 2 balanced classes)=0": homogeneity_completeness_v([1, 1, 1, 1], [0, 0, 1, 1]) == (0.0, 1.0, 0.0),
        "binary_f1 30/10/30=0.6": abs(binary_f1([2] * 30 + [2] * 10 + [1] * 30, [2] * 30 + [1] * 10 + [2] * 30) - 0.6) < 1e-12,
        "binary_f1(pred=truth)=1": binary_f1([1, 2, 2], [1, 2, 2]) == 1.0,
        "binary_f1(complement)=0": binary_f1([2, 1, 1], [1, 2, 2]) == 0.0,
    }
    truth = [TrunkPoint((0, 0, 0), 1), TrunkPoint((10, 0, 0), 2), TrunkPoint((20, 0, 0), 3)]
    det = [TrunkPoint((0.2, 0, 0), 1), TrunkPoint((10, 0.4, 0), 2), TrunkPoint((20, 0, 0.9), 3)]
    m = match_trunks(det, truth)
    checks["match 0.2/0.4/0.9"] = (m.tp, m.fp, m.fn) == (3, 0, 0) and abs(m.mean_distance - 0.5) < 1e-12
    m = match_trunks([TrunkPoint((1.5, 0, 0), 1)], [TrunkPoint((0, 0, 0), 1)])
    checks["match beyond 1 m"] = (m.tp, m.fp, m.fn, m.f1) == (0, 1, 1, 0.0)
    m = match_trunks(truth, truth)
    checks["match identical"] = (m.precision, m.recall, m.f1, m.mean_distance) == (1.0, 1.0, 1.0, 0.0)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and all(checks.values()) and elapsed < 10
    bad = [k for k, v in checks.items() if not v]
    record("C2 metric oracles", ok, f"200 random labelings, max |diff| {worst:.2e} (<=1e-9); "
           f"{len(checks)} tabulated cases, failed {bad or 'none'}; {elapsed:.2f}s (<10s)")
    assert worst <= 1e-9
    assert not bad
    assert elapsed < 10


def test_c3_segmentation_spacing_trend():
    t0 = time.perf_counter()
    means = {}
    for spacing in (8.0, 3.0):
        vals = []
        for seed in SEEDS:
            o = generate_orchard(OrchardSpec(rows=2, per_row=3, row_spacing=spacing, tree_spacing=spacing, seed=seed))
            scene = prepare_scene(o.cloud)
            vals.append(score_segmentation(segment_scene(scene, o.trunks).labels, o.cloud.tree_id))
        means[spacing] = float(np.mean(vals))
    elapsed = time.perf_counter() - t0
    gap = means[8.0] - means[3.0]
    ok = means[8.0] >= 0.95 and gap >= 0.05 and elapsed < 600
    record("C3 segmentation spacing trend", ok,
           f"mean v @8m {means[8.0]:.4f} (>=0.95), @3m {means[3.0]:.4f}, gap {gap:.4f} (>=0.05); {elapsed:.0f}s")
    assert means[8.0] >= 0.95
    assert gap >= 0.05
    assert elapsed < 600


def test_c4_segmentation_noise_stability(noise_sweep):
    res, elapsed = noise_sweep
    means = {s: float(np.mean([res[s, k][0] for k in SEEDS])) for s in NOISE}
    spread = max(means.values()) - min(means.values())
    ok = spread < 0.05 and elapsed < 600
    record("C4 segmentation noise stability", ok,
           "mean v " + ", ".join(f"s={s}: {v:.4f}" for s, v in means.items())
           + f"; spread {spread:.4f} (<0.05); {elapsed:.0f}s shared with C5")
    assert spread < 0.05
    assert elapsed < 600


def test_c5_classification_noise_stability(noise_sweep):
    res, elapsed = noise_sweep
    means = {s: float(np.mean([res[s, k][1] for k in SEEDS])) for s in NOISE}
    spread = max(means.values()) - min(means.values())
    in_band = all(0.35 <= v <= 0.65 for v in means.values())
    ok = spread < 0.1 and in_band and elapsed < 600
    record("C5 classification noise stability", ok,
           "mean F1 " + ", ".join(f"s={s}: {v:.4f}" for s, v in means.items())
           + f"; spread {spread:.4f} (<0.1); band 0.35-0.65 {'met' if in_band else 'missed'}")
    assert spread < 0.1
    assert in_band
    assert elapsed < 600


def test_c6_trunk_detection_band():
    t0 = time.perf_counter()
    tp = fp = fn = 0
    dists = []
    for noise in NOISE:
        for seed in SEEDS:
            o = generate_orchard(OrchardSpec(rows=3, per_row=3, tree_spacing=6, row_spacing=8, noise=noise, seed=seed))
            m = match_trunks(detect_trunks(o.cloud).trunks, o.trunks, max_dist=1.0)
            tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
            dists += [p[2] for p in m.pairs]
    recall = tp / (tp + fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    mean_d = float(np.mean(dists)) if dists else float("inf")
    elapsed = time.perf_counter() - t0
    ok = recall >= 0.75 and f1 >= 0.6 and mean_d <= 0.6 and elapsed < 600
    record("C6 trunk detection band", ok,
           f"3x3 stands at 6x8 m, 8 seeds x noise {NOISE}: TP {tp} FP {fp} FN {fn}, recall {recall:.3f} (>=0.75), "
           f"F1 {f1:.3f} (>=0.6), mean TP distance {mean_d:.3f} m (<=0.6); {elapsed:.0f}s")
    assert recall >= 0.75 and f1 >= 0.6 and mean_d <= 0.6
    assert elapsed < 600


ROTATION_INVARIANT = ("anisotropy", "eigenentropy", "linearity", "omnivariance", "planarity", "sphericity",
                      "surface_variation", "area_normal")


def test_c7_eigenfeature_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    worst_rot, worst_sum = 0.0, 0.0
    for _ in range(300):
        n = int(rng.integers(3, 80))
        pts = rng.normal(size=(n, 3)) * rng.uniform(0.01, 1.0, 3)
        a = point_set_descriptors(pts)
        b = point_set_descriptors(pts @ oracles.random_rotation(rng).T + rng.normal(size=3))
        for k in ROTATION_INVARIANT:
            worst_rot = max(worst_rot, abs(a[k] - b[k]))
        worst_rot = max(worst_rot, float(np.abs(a["eigenvalues"] - b["eigenvalues"]).max()))
        worst_sum = max(worst_sum, abs(a["linearity"] + a["planarity"] + a["sphericity"] - 1))
    t = np.linspace(0, 1, 50)
    line = point_set_descriptors(np.column_stack([t, 2 * t, -t]))
    plane_pts = np.column_stack([rng.uniform(size=50), rng.uniform(size=50), np.zeros(50)]) @ oracles.random_rotation(rng).T
    plane = point_set_descriptors(plane_pts)
    normal_true = np.cross(plane_pts[1] - plane_pts[0], plane_pts[2] - plane_pts[0])
    normal_true /= np.linalg.norm(normal_true)
    cases = {
        "line l=1,p=0,s=0": abs(line["linearity"] - 1) <= 1e-9 and abs(line["planarity"]) <= 1e-9
        and abs(line["sphericity"]) <= 1e-9,
        "plane s~0, v3 normal": abs(plane["sphericity"]) <= 1e-9
        and abs(abs(plane["eigenvectors"][2] @ normal_true) - 1) <= 1e-9,
    }
    elapsed = time.perf_counter() - t0
    bad = [k for k, v in cases.items() if not v]
    ok = worst_rot <= 1e-6 and worst_sum <= 1e-12 and not bad and elapsed < 30
    record("C7 eigenfeature invariants", ok,
           f"300 random rotations max |diff| {worst_rot:.2e} (<=1e-6); max |l+p+s-1| {worst_sum:.1e}; "
           f"degenerate cases failed {bad or 'none'}; {elapsed:.2f}s")
    assert worst_rot <= 1e-6 and worst_sum <= 1e-12 and not bad


def test_c8_determinism_across_workers(tmp_path):
    t0 = time.perf_counter()
    o = generate_orchard(OrchardSpec(rows=2, per_row=3, noise=0.05, seed=11))
    src = tmp_path / "stand.csv"
    write_cloud(o.cloud, src)
    outputs = {}
    for workers in (1, 4):
        for ext in ("csv", "bin"):
            out = tmp_path / f"out_{workers}.{ext}"
            man = tmp_path / f"manifest_{workers}_{ext}.json"
            assert cli.main(["analyze", str(src), "--out", str(out), "--manifest", str(man),
                             "--workers", str(workers)]) == 0
            outputs[workers, ext] = out.read_bytes()
            m = json.loads(man.read_text())
            for k in ("timings", "output"):
                m.pop(k)
            m["config"].pop("workers")
            outputs[workers, ext + "-manifest"] = m
    same = {k: outputs[1, k] == outputs[4, k] for k in ("csv", "bin", "csv-manifest", "bin-manifest")}
    elapsed = time.perf_counter() - t0
    ok = all(same.values()) and elapsed < 300
    record("C8 determinism", ok, f"workers 1 vs 4: identical {same}; {elapsed:.0f}s (<300s)")
    assert all(same.values())
    assert elapsed < 300


def test_c9_performance_floor():
    spec = OrchardSpec(rows=1, per_row=3, noise=0.02, seed=1, woody_density=500.0 * 30,
                       leaf_points=260 * 30, ground_density=60.0 * 30)
    o = generate_orchard(spec)
    n = len(o.cloud)
    t0 = time.perf_counter()
    result = analyze(o.cloud, AnalysisConfig(), truth_trunks=o.trunks)
    elapsed = time.perf_counter() - t0
    stages = ", ".join(f"{k} {v:.1f}s" for k, v in result.manifest["timings"].items())
    ok = n >= 1_500_000 and elapsed < 120 and len(result.trunks) == 3
    record("C9 performance floor", ok,
           f"{n} points, 3 trees: analyze {elapsed:.1f}s (<120s) [{stages}]; "
           f"{len(result.trunks)} trunks found, v {result.metrics['v_measure']:.3f}, F1 {result.metrics['f1']:.3f}")
    assert n >= 1_500_000
    assert elapsed < 120
