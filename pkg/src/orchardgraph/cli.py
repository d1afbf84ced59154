"""Command-line entry point: one subcommand per stage plus ``analyze`` and ``sweep``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from .classify import calibrate, classify_matter, score_matter
from .enrich import SCALAR_FEATURES, compute_features
from .graph import build_graph
from .metrics import binary_f1, classification_mask, homogeneity_completeness_v, match_trunks, segmentation_mask
from .pipeline import (AnalysisConfig, ConfigError, StageError, SweepSpec, analyze, load_config, sweep,
                       write_manifest)
from .pointcloud import GROUND_ID, Matter, PointCloud, read_cloud, read_trunks, write_cloud, write_trunks
from .preprocess import remove_ground, voxelize
from .scene import prepare_scene
from .segment import segment_scene
from .synth import OrchardSpec, generate_orchard
from .trunks import detect_trunks

logger = logging.getLogger("orchardgraph")

# flag destination -> configuration key
CONFIG_FLAGS = {
    "ground_radius": "ground_radius",
    "ground_tol": "ground_tolerance",
    "voxel_size": "voxel_size",
    "edge_radius": "edge_radius",
    "weights": "weighting",
    "neighborhood": "neighborhood",
    "coarse_voxel": "coarse_voxel",
    "source_spacing": "source_spacing",
    "min_radius": "minimum_radius",
    "merge_dist": "merge_distance",
    "min_source_height": "min_source_height",
    "anchor_radius": "anchor_radius",
    "fallback": "fallback",
    "threshold": "threshold",
    "smooth_radius": "smoothing_radius",
    "max_dist": "match_distance",
    "workers": "workers",
}


def _config(args) -> AnalysisConfig:
    overrides = {key: getattr(args, flag) for flag, key in CONFIG_FLAGS.items() if hasattr(args, flag)}
    if getattr(args, "no_detect", False):
        overrides["detect"] = False
    return load_config(getattr(args, "config", None), **overrides)


def _ground_flags(p):
    p.add_argument("--ground-radius", type=float, help="lateral ground search radius (m)")
    p.add_argument("--ground-tol", type=float, help="height tolerance above the local minimum (m)")


def _graph_flags(p, weights=True):
    _ground_flags(p)
    p.add_argument("--voxel-size", type=float, help="voxel side (m)")
    p.add_argument("--edge-radius", type=float, help="graph edge radius (m)")
    if weights:
        p.add_argument("--weights", choices=("none", "density", "cosine"), help="edge weighting scheme")
        p.add_argument("--neighborhood", type=float, help="enrichment support radius (m)")


def _trunk_flags(p):
    p.add_argument("--coarse-voxel", type=float, help="coarse voxel side for trunk search (m)")
    p.add_argument("--source-spacing", type=float, help="spacing of canopy search sources (m)")
    p.add_argument("--min-radius", type=float, help="local minimum neighbourhood radius (m)")
    p.add_argument("--merge-dist", type=float, help="merge trunk candidates closer than this (m)")
    p.add_argument("--min-source-height", type=float, help="minimum source height above ground (m)")


def _segment_flags(p):
    p.add_argument("--anchor-radius", type=float, help="maximum trunk to node distance (m)")
    p.add_argument("--fallback", action=argparse.BooleanOptionalAction, default=None,
                   help="assign unreached points to the closest trunk")


def _classify_flags(p):
    p.add_argument("--threshold", type=float, help="woody score threshold")
    p.add_argument("--smooth-radius", type=float, help="score smoothing radius (m)")


def _common(p, config=True, workers=True):
    p.add_argument("--format", choices=("csv", "binary"), help="cloud file format (default: by suffix)")
    if config:
        p.add_argument("--config", help="JSON file of configuration values")
    if workers:
        p.add_argument("--workers", type=int, help="parallel workers (results do not depend on it)")


def _load_trunks(path):
    trunks = read_trunks(path)
    if not trunks:
        raise ValueError(f"{path} holds no trunks")
    return trunks


def _trunks_or_detect(args, cloud, cfg, partition=None):
    if args.trunks:
        return _load_trunks(args.trunks)
    det = detect_trunks(cloud, cfg.trunk_config(), partition)
    if not det.trunks:
        raise ValueError(f"no trunks found: {det.diagnostic}")
    return det.trunks


def _write_edges(graph, path):
    edges = graph.edge_list()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "cost"])
        for a, b, c in edges:
            w.writerow([int(a), int(b), repr(float(c))])


def _write_features(grid, table, path):
    mat = table.matrix(SCALAR_FEATURES)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "x", "y", "z", *SCALAR_FEATURES, "support"])
        for i in range(len(grid)):
            w.writerow([i, *map(repr, grid.positions[i].tolist()), *map(repr, mat[i].tolist()),
                        int(table.support[i])])


# -- subcommands -----------------------------------------------------------------


def cmd_simulate(args):
    spec = OrchardSpec(rows=args.rows, per_row=args.per_row, row_spacing=args.row_spacing,
                       tree_spacing=args.tree_spacing, noise=args.noise, seed=args.seed)
    orchard = generate_orchard(spec)
    write_cloud(orchard.cloud, args.out, args.format)
    if args.trunks_out:
        write_trunks(orchard.trunks, args.trunks_out)
    print(f"{len(orchard.cloud)} points, {len(orchard.trunks)} trees -> {args.out}")


def cmd_preprocess(args):
    cfg = _config(args)
    cloud = read_cloud(args.input, args.format)
    part = remove_ground(cloud, cfg.ground_radius, cfg.ground_tolerance)
    tree = np.full(len(cloud), -1, dtype=np.int32)
    matter = np.full(len(cloud), Matter.UNKNOWN, dtype=np.uint8)
    tree[part.ground_ids] = GROUND_ID
    matter[part.ground_ids] = Matter.GROUND
    write_cloud(PointCloud(cloud.xyz, tree, matter, cloud.source_id), args.out, args.format)
    grid = voxelize(cloud, part.nonground_ids, cfg.voxel_size)
    if args.nodes_out:
        np.savetxt(args.nodes_out, grid.positions, delimiter=",", header="x,y,z", comments="", fmt="%.17g")
    print(f"{len(part.ground_ids)} ground, {len(part.nonground_ids)} canopy points, {len(grid)} voxels")


def cmd_enrich(args):
    cfg = _config(args)
    cloud = read_cloud(args.input, args.format)
    part = remove_ground(cloud, cfg.ground_radius, cfg.ground_tolerance)
    grid = voxelize(cloud, part.nonground_ids, cfg.voxel_size)
    table = compute_features(cloud, grid, cfg.neighborhood)
    _write_features(grid, table, args.out)
    if args.edges_out:
        _write_edges(build_graph(grid, cfg.edge_radius, cfg.weighting, table), args.edges_out)
    print(f"{len(grid)} voxels enriched -> {args.out}")


def cmd_graph(args):
    cfg = _config(args)
    scene = prepare_scene(read_cloud(args.input, args.format), cfg.graph_params())
    _write_edges(scene.graph, args.edges_out)
    print(f"{len(scene.graph)} nodes, {scene.graph.n_edges} edges -> {args.edges_out}")


def cmd_find_trunks(args):
    cfg = _config(args)
    cloud = read_cloud(args.input, args.format)
    det = detect_trunks(cloud, cfg.trunk_config())
    if not det.trunks:
        logger.warning("find-trunks: %s", det.diagnostic)
    write_trunks(det.trunks, args.out)
    print(f"{len(det.trunks)} trunks -> {args.out}")


def cmd_segment(args):
    cfg = _config(args)
    cloud = read_cloud(args.input, args.format)
    scene = prepare_scene(cloud, cfg.graph_params())
    trunks = _load_trunks(args.trunks)
    seg = segment_scene(scene, trunks, cfg.fallback, cfg.anchor_radius, cfg.workers)
    write_cloud(PointCloud(cloud.xyz, seg.labels, cloud.matter, cloud.source_id), args.out, args.format)
    if args.edges_out:
        _write_edges(scene.graph, args.edges_out)
    print(f"{len(cloud)} points segmented into {len(trunks)} trees -> {args.out}")


def _classify(args, cfg, cloud):
    scene = prepare_scene(cloud, cfg.graph_params())
    trunks = _trunks_or_detect(args, cloud, cfg, scene.partition)
    seg = segment_scene(scene, trunks, cfg.fallback, cfg.anchor_radius, cfg.workers)
    scores = score_matter(scene.graph, aggregate=seg.aggregate)
    mc = classify_matter(cloud, scene.graph.positions, scores, scene.partition.mask(), cfg.threshold,
                         cfg.smoothing_radius, cfg.workers)
    return seg, mc


def cmd_classify(args):
    cfg = _config(args)
    cloud = read_cloud(args.input, args.format)
    seg, mc = _classify(args, cfg, cloud)
    tree = cloud.tree_id if cloud.tree_id is not None else seg.labels
    write_cloud(PointCloud(cloud.xyz, tree, mc.matter, cloud.source_id), args.out, args.format)
    if args.scores_out:
        np.savetxt(args.scores_out, mc.smoothed, header="score", comments="", fmt="%.17g")
    counts = {m.name.lower(): int((mc.matter == m).sum()) for m in Matter}
    print(", ".join(f"{v} {k}" for k, v in counts.items()) + f" -> {args.out}")


def cmd_calibrate(args):
    cfg = _config(args)
    cloud = read_cloud(args.labeled, args.format)
    if cloud.matter is None:
        raise ValueError(f"{args.labeled} has no class labels")
    _, mc = _classify(args, cfg, cloud)
    cal = calibrate(mc.smoothed, cloud.matter)
    rows = [("class", "mean", "std", "points"),
            ("woody", cal.woody_mean, cal.woody_std, cal.n_woody),
            ("leafy", cal.leafy_mean, cal.leafy_std, cal.n_leafy)]
    for r in rows:
        print(f"{r[0]:<8}" + "".join(f"{v:>12.4f}" if isinstance(v, float) else f"{v:>12}" for v in r[1:]))
    print(f"suggested threshold (midpoint of means): {cal.midpoint:.4f}")
    print(f"F1-optimal threshold: {cal.best_f1_threshold:.4f} (F1 {cal.best_f1:.4f})")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(cal.as_dict(), fh, indent=2)


def cmd_eval(args):
    if args.kind == "trunks":
        cfg = _config(args)
        m = match_trunks(read_trunks(args.pred), read_trunks(args.truth), cfg.match_distance)
        table = m.as_dict()
    else:
        pred = read_cloud(args.pred, args.format)
        truth = read_cloud(args.truth, args.format)
        if len(pred) != len(truth):
            raise ValueError(f"prediction has {len(pred)} points, truth has {len(truth)}")
        if not (pred.labeled and truth.labeled):
            raise ValueError("both clouds must carry labels")
        if args.kind == "segmentation":
            mask = segmentation_mask(pred.tree_id, truth.tree_id)
            h, c, v = homogeneity_completeness_v(pred.tree_id[mask], truth.tree_id[mask])
            table = {"homogeneity": h, "completeness": c, "v_measure": v, "points": int(mask.sum())}
        else:
            mask = classification_mask(pred.matter, truth.matter)
            table = {"f1": binary_f1(pred.matter[mask], truth.matter[mask]), "points": int(mask.sum())}
    width = max(len(k) for k in table)
    for k, v in table.items():
        print(f"{k:<{width}}  {v}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in table.items():
                w.writerow([k, v])


def cmd_analyze(args):
    cfg = _config(args)
    trunks = _load_trunks(args.trunks) if args.trunks else None
    if trunks is None and not cfg.detect:
        raise ConfigError("--no-detect needs --trunks")
    try:
        cloud = read_cloud(args.input, args.format)
    except (OSError, ValueError) as exc:
        raise StageError("read", exc) from exc
    truth = _load_trunks(args.truth_trunks) if args.truth_trunks else None
    result = analyze(cloud, cfg, trunks=trunks, truth_trunks=truth)
    write_cloud(result.cloud, args.out, args.format)
    result.manifest["input"] = str(args.input)
    result.manifest["output"] = str(args.out)
    if args.trunks_out:
        write_trunks(result.trunks, args.trunks_out)
    if args.manifest:
        write_manifest(result.manifest, args.manifest)
    for k, v in result.metrics.items():
        print(f"{k}: {v}")
    print(f"{len(result.trunks)} trees -> {args.out}")


def cmd_sweep(args):
    failed = sweep(SweepSpec.load(args.spec), args.out, args.workers or 1)
    print(f"results -> {args.out}" + (f" ({failed} failed cells)" if failed else ""))


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orchardgraph", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a labelled synthetic stand")
    p.add_argument("--rows", type=int, default=2)
    p.add_argument("--per-row", type=int, default=4)
    p.add_argument("--row-spacing", type=float, default=8.0)
    p.add_argument("--tree-spacing", type=float, default=6.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trunks-out")
    _common(p, config=False, workers=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="split off the ground and voxelise the rest")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="cloud with ground points labelled")
    p.add_argument("--nodes-out", help="CSV of voxel node positions")
    _graph_flags(p, weights=False)
    _common(p, workers=False)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("enrich", help="per-voxel geometric descriptors")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="feature CSV, one row per voxel")
    p.add_argument("--edges-out", help="edge list CSV with weighted costs")
    _graph_flags(p)
    _common(p, workers=False)
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("graph", help="build the voxel graph and dump its edges")
    p.add_argument("input")
    p.add_argument("--edges-out", required=True)
    _graph_flags(p)
    _common(p, workers=False)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("find-trunks", help="locate trunks without priors")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="trunk CSV x,y,z,tree_id")
    _ground_flags(p)
    _trunk_flags(p)
    _common(p, workers=False)
    p.set_defaults(func=cmd_find_trunks)

    p = sub.add_parser("segment", help="assign points to trees")
    p.add_argument("input")
    p.add_argument("--trunks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edges-out")
    _graph_flags(p)
    _segment_flags(p)
    _common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("classify", help="label points woody or leafy")
    p.add_argument("input")
    p.add_argument("--trunks", help="trunk CSV (detected when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--scores-out", help="per-point smoothed scores")
    _graph_flags(p)
    _trunk_flags(p)
    _segment_flags(p)
    _classify_flags(p)
    _common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("calibrate", help="per-class score statistics on labelled data")
    p.add_argument("--labeled", required=True)
    p.add_argument("--trunks", help="trunk CSV (detected when omitted)")
    p.add_argument("--out", help="JSON summary")
    _graph_flags(p)
    _trunk_flags(p)
    _segment_flags(p)
    p.add_argument("--smooth-radius", type=float, help="score smoothing radius (m)")
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="score predictions against truth")
    p.add_argument("kind", choices=("trunks", "segmentation", "classification"))
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--max-dist", type=float, help="trunk match distance (m)")
    p.add_argument("--out", help="metric CSV")
    _common(p, workers=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="ground, trunks, segmentation and classification in one run")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="run manifest JSON")
    p.add_argument("--trunks", help="use these trunks instead of detecting them")
    p.add_argument("--no-detect", action="store_true", help="forbid trunk detection")
    p.add_argument("--truth-trunks", help="score trunk detection against these")
    p.add_argument("--trunks-out")
    p.add_argument("--max-dist", type=float, help="trunk match distance (m)")
    _graph_flags(p)
    _trunk_flags(p)
    _segment_flags(p)
    _classify_flags(p)
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="analyse a grid of synthetic stands")
    p.add_argument("spec", help="JSON sweep specification")
    p.add_argument("--out", required=True, help="long-format results CSV")
    p.add_argument("--workers", type=int, help="parallel cells")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"orchardgraph {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"orchardgraph {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"orchardgraph {args.command}: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
