"""Procedural labelled orchard scans.

Trees are recursive branching skeletons (trunk, limbs, branches, twigs)
whose woody segments are sampled as cylinder surfaces and whose terminal
twigs carry dense leaf clusters.  Every point is labelled with its tree and
matter class before Gaussian noise is added.  There is no scanner model:
surfaces are sampled uniformly, with an optional thinning of the upper
canopy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pointcloud import GROUND_ID, Matter, PointCloud, TrunkPoint


@dataclass(frozen=True)
class OrchardSpec:
    """Layout, noise and tree-shape parameters of a virtual stand.

    Trees sit on a lattice: ``per_row`` trees spaced ``tree_spacing`` along x
    in each of ``rows`` rows spaced ``row_spacing`` along y.
    """

    rows: int = 2
    per_row: int = 4
    row_spacing: float = 8.0
    tree_spacing: float = 6.0
    noise: float = 0.0
    seed: int = 0
    trunk_height: tuple = (0.8, 1.2)
    trunk_radius: tuple = (0.10, 0.18)
    limb_length: tuple = (1.1, 1.5)
    branch_angle: tuple = (30.0, 55.0)  # degrees from the parent axis
    children: tuple = (3, 4)  # limbs on the trunk
    sub_children: tuple = (2, 3)  # children on limbs and branches
    depth: int = 3  # levels above the trunk
    length_ratio: float = 0.7
    radius_ratio: float = 0.6
    woody_density: float = 500.0  # points per m^2 of bark
    leaf_points: int = 260  # points per leaf cluster
    leaf_sigma: float = 0.14
    leaf_clusters: int = 2  # clusters along each leaf-bearing segment
    leaf_levels: int = 3  # how many of the outermost levels carry leaves
    canopy_falloff: float = 0.3  # fraction of points thinned at the tree top
    ground_density: float = 60.0  # points per m^2
    ground_margin: float = 3.0

    def __post_init__(self):
        if self.rows < 1 or self.per_row < 1:
            raise ValueError("rows and per_row must be at least 1")
        if self.row_spacing <= 0 or self.tree_spacing <= 0:
            raise ValueError("spacings must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")

    @property
    def n_trees(self) -> int:
        return self.rows * self.per_row

    def lattice(self) -> np.ndarray:
        """Ground-truth trunk base positions, row-major."""
        j, i = np.meshgrid(np.arange(self.per_row), np.arange(self.rows))
        xy = np.column_stack([j.ravel() * self.tree_spacing, i.ravel() * self.row_spacing])
        return np.column_stack([xy, np.zeros(len(xy))])


@dataclass
class Segment:
    start: np.ndarray
    end: np.ndarray
    radius: float
    level: int


@dataclass
class SyntheticOrchard:
    """Generated cloud plus the ground truth behind it.

    ``segment_of`` maps each woody point to its row in ``segments`` (-1 for
    leafy and ground points); ``segments`` rows are ``(x0, y0, z0, x1, y1,
    z1, radius, tree_id)``.
    """

    cloud: PointCloud
    trunks: list
    segments: np.ndarray
    segment_of: np.ndarray
    canopy_radius: np.ndarray = field(default_factory=lambda: np.empty(0))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


def _rotate_away(axis: np.ndarray, angle: float, azimuth: float) -> np.ndarray:
    """Unit vector at ``angle`` from ``axis``, turned ``azimuth`` around it."""
    axis = axis / np.linalg.norm(axis)
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    return np.cos(angle) * axis + np.sin(angle) * (np.cos(azimuth) * u + np.sin(azimuth) * w)


def _grow(spec: OrchardSpec, rng, base: np.ndarray):
    segs = []
    tilt = rng.uniform(0, np.radians(4))
    trunk_dir = _rotate_away(np.array([0.0, 0.0, 1.0]), tilt, rng.uniform(0, 2 * np.pi))
    h = rng.uniform(*spec.trunk_height)
    r0 = rng.uniform(*spec.trunk_radius)
    segs.append(Segment(base, base + h * trunk_dir, r0, 0))

    def recurse(parent: Segment, length: float, level: int):
        k = rng.integers(spec.children[0], spec.children[1] + 1) if level == 1 else \
            rng.integers(spec.sub_children[0], spec.sub_children[1] + 1)
        axis = parent.end - parent.start
        axis /= np.linalg.norm(axis)
        phase = rng.uniform(0, 2 * np.pi)
        for c in range(k):
            angle = np.radians(rng.uniform(*spec.branch_angle))
            azim = phase + 2 * np.pi * c / k + rng.uniform(-0.3, 0.3)
            d = _rotate_away(axis, angle, azim)
            if level == 1:
                # limbs fan out from the vertical rather than from a tilted trunk
                d = _rotate_away(np.array([0.0, 0.0, 1.0]), angle, azim)
            elif d[2] < -0.2:
                d[2] = -0.2
                d /= np.linalg.norm(d)
            seg_len = length * rng.uniform(0.85, 1.15)
            child = Segment(parent.end, parent.end + seg_len * d, parent.radius * spec.radius_ratio, level)
            segs.append(child)
            if level < spec.depth:
                recurse(child, length * spec.length_ratio, level + 1)

    recurse(segs[0], rng.uniform(*spec.limb_length), 1)
    return segs


def _sample_cylinder(rng, seg: Segment, density: float):
    axis = seg.end - seg.start
    length = np.linalg.norm(axis)
    axis_u = axis / length
    n = max(3, int(round(density * 2 * np.pi * seg.radius * length)))
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis_u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis_u, ref)
    u /= np.linalg.norm(u)
    w = np.cross(axis_u, u)
    t = rng.uniform(0, length, n)
    th = rng.uniform(0, 2 * np.pi, n)
    ring = np.cos(th)[:, None] * u + np.sin(th)[:, None] * w
    return seg.start + t[:, None] * axis_u + seg.radius * ring


def _sample_leaves(rng, spec: OrchardSpec, seg: Segment):
    out = []
    for c in range(spec.leaf_clusters):
        frac = 1.0 if c == 0 else rng.uniform(0.4, 0.9)
        centre = seg.start + frac * (seg.end - seg.start)
        off = rng.normal(0, spec.leaf_sigma, (spec.leaf_points, 3))
        norm = np.linalg.norm(off, axis=1)
        cap = 2.5 * spec.leaf_sigma
        off *= np.minimum(1.0, cap / np.maximum(norm, 1e-12))[:, None]
        out.append(centre + off)
    return np.vstack(out)


def generate_orchard(spec: OrchardSpec) -> SyntheticOrchard:
    """Generate a labelled virtual stand; a fixed seed gives identical output.

    Point order is ground first, then trees in lattice order, each tree's
    woody points followed by its leaves.
    """
    lattice = spec.lattice()
    xyz_parts, tree_parts, matter_parts, seg_parts = [], [], [], []
    seg_rows = []
    canopy_radius = []

    for t, base in enumerate(lattice):
        tree_id = t + 1
        rng = _rng(spec.seed, tree_id)
        segs = _grow(spec, rng, base)
        top = max(max(s.start[2], s.end[2]) for s in segs) + 2.5 * spec.leaf_sigma

        woody, woody_seg = [], []
        for s in segs:
            pts = _sample_cylinder(rng, s, spec.woody_density)
            woody.append(pts)
            woody_seg.append(np.full(len(pts), len(seg_rows)))
            seg_rows.append([*s.start, *s.end, s.radius, tree_id])
        leaves = [_sample_leaves(rng, spec, s) for s in segs if s.level > spec.depth - spec.leaf_levels]
        woody = np.vstack(woody)
        woody_seg = np.concatenate(woody_seg)
        leaves = np.vstack(leaves)

        if spec.canopy_falloff > 0:
            def keep(p):
                frac = np.clip(p[:, 2] / top, 0, 1)
                return rng.uniform(size=len(p)) >= spec.canopy_falloff * frac**2
            kw = keep(woody)
            kw[woody_seg == woody_seg[0]] = True  # never thin the trunk
            woody, woody_seg = woody[kw], woody_seg[kw]
            leaves = leaves[keep(leaves)]

        pts = np.vstack([woody, leaves])
        canopy_radius.append(float(np.linalg.norm(pts[:, :2] - base[:2], axis=1).max()))
        xyz_parts.append(pts)
        tree_parts.append(np.full(len(pts), tree_id))
        matter_parts.append(np.concatenate([np.full(len(woody), Matter.WOODY), np.full(len(leaves), Matter.LEAFY)]))
        seg_parts.append(np.concatenate([woody_seg, np.full(len(leaves), -1)]))

    ground_rng = _rng(spec.seed, 0)
    lo = lattice[:, :2].min(axis=0) - spec.ground_margin
    hi = lattice[:, :2].max(axis=0) + spec.ground_margin
    n_ground = int(round(spec.ground_density * np.prod(hi - lo)))
    ground = np.column_stack([ground_rng.uniform(lo[0], hi[0], n_ground),
                              ground_rng.uniform(lo[1], hi[1], n_ground),
                              np.zeros(n_ground)])

    xyz = np.vstack([ground] + xyz_parts)
    tree_id = np.concatenate([np.full(n_ground, GROUND_ID)] + tree_parts)
    matter = np.concatenate([np.full(n_ground, Matter.GROUND)] + matter_parts)
    segment_of = np.concatenate([np.full(n_ground, -1)] + seg_parts)
    if spec.noise > 0:
        xyz = xyz + _rng(spec.seed, 10**6).normal(0, spec.noise, xyz.shape)

    trunks = [TrunkPoint(tuple(p), i + 1) for i, p in enumerate(lattice)]
    cloud = PointCloud(xyz, tree_id, matter, np.zeros(len(xyz), np.int32))
    return SyntheticOrchard(cloud, trunks, np.asarray(seg_rows, dtype=np.float64).reshape(-1, 8),
                            segment_of.astype(np.int64), np.asarray(canopy_radius))
