"""End-to-end analysis runs and parameter sweeps over synthetic stands."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .classify import classify_matter, score_matter
from .metrics import match_trunks, score_classification, score_segmentation
from .pointcloud import PointCloud
from .preprocess import remove_ground
from .scene import GraphParams, prepare_scene
from .segment import segment_scene
from .synth import OrchardSpec, generate_orchard
from .trunks import TrunkDetectionConfig, detect_trunks

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; the message is prefixed with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class AnalysisConfig:
    """Every parameter of an ``analyze`` run, with the published defaults."""

    ground_radius: float = 1.0
    ground_tolerance: float = 0.15
    voxel_size: float = 0.1
    edge_radius: float = 0.15
    weighting: str = "none"
    neighborhood: Optional[float] = None
    detect: bool = True
    coarse_voxel: float = 0.4
    source_spacing: float = 2.0
    minimum_radius: float = 1.0
    merge_distance: float = 1.0
    min_source_height: float = 1.0
    anchor_radius: float = 0.5
    fallback: bool = True
    threshold: float = 0.216
    smoothing_radius: float = 0.3
    match_distance: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for name in ("ground_radius", "voxel_size", "edge_radius", "anchor_radius",
                     "smoothing_radius", "match_distance"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, values: dict) -> "AnalysisConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**values)

    def replace(self, **changes) -> "AnalysisConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    def graph_params(self) -> GraphParams:
        return GraphParams(self.ground_radius, self.ground_tolerance, self.voxel_size,
                           self.edge_radius, self.weighting, self.neighborhood)

    def trunk_config(self) -> TrunkDetectionConfig:
        return TrunkDetectionConfig(
            coarse_voxel=self.coarse_voxel, source_spacing=self.source_spacing,
            minimum_radius=self.minimum_radius, merge_distance=self.merge_distance,
            min_source_height=self.min_source_height, ground_radius=self.ground_radius,
            ground_tolerance=self.ground_tolerance)


def load_config(path=None, **overrides) -> AnalysisConfig:
    """Defaults, then the JSON file at ``path``, then non-``None`` overrides."""
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(json.load(fh))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return AnalysisConfig.from_dict(values)


@dataclass
class AnalysisResult:
    cloud: PointCloud  # input coordinates with predicted tree ids and classes
    trunks: list
    manifest: dict
    smoothed: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def metrics(self) -> dict:
        return self.manifest.get("metrics", {})


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0
        logger.info("%s: %.2f s", name, timings[name])


def environment() -> dict:
    return {"orchardgraph": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def analyze(cloud: PointCloud, config: AnalysisConfig = AnalysisConfig(), trunks=None,
            truth_trunks=None) -> AnalysisResult:
    """Ground removal, trunk finding, segmentation and matter classification.

    Given ``trunks`` are used as-is; otherwise they are detected, which
    ``config.detect = False`` forbids.  If the input cloud carries labels
    they are treated as ground truth and scored; ``truth_trunks`` adds trunk
    detection scores.

    Raises:
        ConfigError: no trunks given while detection is disabled.
        StageError: any stage failed; ``stage`` names it.
    """
    if trunks is None and not config.detect:
        raise ConfigError("trunk detection is disabled and no trunk file was given")
    timings: dict = {}
    diagnostics: dict = {}
    workers = config.workers

    with _stage("preprocess", timings):
        partition = remove_ground(cloud, config.ground_radius, config.ground_tolerance)
        scene = prepare_scene(cloud, config.graph_params(), partition)
    diagnostics.update(n_points=len(cloud), n_ground=len(partition.ground_ids), n_nodes=len(scene.grid),
                       n_edges=scene.graph.n_edges)

    if trunks is None:
        with _stage("find-trunks", timings):
            det = detect_trunks(cloud, config.trunk_config(), partition)
            if not det.trunks:
                raise ValueError(f"no trunks found: {det.diagnostic}")
            trunks = det.trunks
        trunk_source = "detected"
    else:
        trunk_source = "given"
    trunks = list(trunks)

    with _stage("segment", timings):
        seg = segment_scene(scene, trunks, config.fallback, config.anchor_radius, workers)
    with _stage("classify", timings):
        scores = score_matter(scene.graph, aggregate=seg.aggregate)
        mc = classify_matter(cloud, scene.graph.positions, scores, partition.mask(),
                             config.threshold, config.smoothing_radius, workers)
    diagnostics["max_path_count"] = seg.aggregate.max_count

    metrics: dict = {}
    if cloud.labeled or truth_trunks is not None:
        with _stage("eval", timings):
            if cloud.labeled:
                metrics["v_measure"] = score_segmentation(seg.labels, cloud.tree_id)
                metrics["f1"] = score_classification(mc.matter, cloud.matter)
            if truth_trunks is not None:
                m = match_trunks(seg.trunks, truth_trunks, config.match_distance)
                metrics.update({f"trunk_{k}": v for k, v in m.as_dict().items()})

    out = PointCloud(cloud.xyz, seg.labels, mc.matter, cloud.source_id)
    manifest = {
        "environment": environment(),
        "config": config.as_dict(),
        "trunk_source": trunk_source,
        "trunks": [[*t.position, t.tree_id] for t in seg.trunks],
        "diagnostics": diagnostics,
        "metrics": metrics,
        "timings": timings,
    }
    return AnalysisResult(out, seg.trunks, manifest, mc.smoothed)


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# -- sweeps -------------------------------------------------------------------

SPACING_KEY = "spacing"  # sets both tree and row spacing


@dataclass(frozen=True)
class SweepSpec:
    """A grid of synthetic stands to analyse.

    ``grid`` maps :class:`OrchardSpec` field names (or ``spacing``) to value
    lists; cells are the Cartesian product in key order.  ``stand`` holds
    fixed generator settings and ``config`` analysis overrides.  With
    ``truth_trunks`` the generator's trunks are used instead of detection.
    """

    grid: dict
    stand: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    truth_trunks: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        unknown = set(d) - {"grid", "stand", "config", "truth_trunks"}
        if unknown:
            raise ConfigError(f"unknown sweep keys: {', '.join(sorted(unknown))}")
        spec = cls(dict(d.get("grid", {})), dict(d.get("stand", {})), dict(d.get("config", {})),
                   bool(d.get("truth_trunks", False)))
        allowed = {f.name for f in fields(OrchardSpec)} | {SPACING_KEY}
        bad = sorted((set(spec.grid) | set(spec.stand)) - allowed)
        if bad:
            raise ConfigError(f"unknown stand parameters: {', '.join(bad)}")
        AnalysisConfig.from_dict(spec.config)
        return spec

    @classmethod
    def load(cls, path) -> "SweepSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @property
    def params(self) -> list:
        return list(self.grid)

    def cells(self) -> list:
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            return []
        return [dict(zip(self.grid, combo)) for combo in itertools.product(*self.grid.values())]


def _stand(values: dict) -> OrchardSpec:
    values = dict(values)
    if SPACING_KEY in values:
        s = values.pop(SPACING_KEY)
        values.setdefault("tree_spacing", s)
        values.setdefault("row_spacing", s)
    for k, v in values.items():
        if isinstance(v, list):
            values[k] = tuple(v)
    return OrchardSpec(**values)


def run_cell(spec: SweepSpec, cell: dict) -> tuple:
    """Metrics of one sweep cell as ``(rows, runtime_s, error)``."""
    t0 = time.perf_counter()
    try:
        orchard = generate_orchard(_stand({**spec.stand, **cell}))
        config = AnalysisConfig.from_dict({**spec.config, "workers": 1})
        given = orchard.trunks if spec.truth_trunks else None
        result = analyze(orchard.cloud, config, trunks=given, truth_trunks=orchard.trunks)
        metrics = [(k, v) for k, v in result.metrics.items()
                   if not (spec.truth_trunks and k.startswith("trunk_"))]
        return metrics, time.perf_counter() - t0, None
    except Exception as exc:  # recorded, the sweep goes on
        logger.warning("sweep cell %s failed: %s", cell, exc)
        return [], time.perf_counter() - t0, str(exc)


def sweep(spec: SweepSpec, out_path, workers: int = 1) -> int:
    """Run every cell and write long-format rows ``params..., metric, value, runtime_s``.

    Failed cells produce one row with metric ``error`` and the message as
    value.  Rows follow cell order whatever the worker count.

    Returns:
        Number of failed cells.
    """
    cells = spec.cells()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, [spec] * len(cells), cells))
    else:
        results = [run_cell(spec, c) for c in cells]
    failed = 0
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*spec.params, "metric", "value", "runtime_s"])
        for cell, (metrics, runtime, error) in zip(cells, results):
            key = [cell[p] for p in spec.params]
            if error is not None:
                failed += 1
                w.writerow([*key, "error", error, f"{runtime:.3f}"])
                continue
            for name, value in metrics:
                w.writerow([*key, name, repr(float(value)), f"{runtime:.3f}"])
    logger.info("sweep: %d cells, %d failed", len(cells), failed)
    return failed
