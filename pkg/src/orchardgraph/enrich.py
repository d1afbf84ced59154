"""Per-voxel descriptors and the edge weights derived from them.

Eigen-based descriptors follow the usual normalised-eigenvalue definitions
(``e_i = lambda_i / sum(lambda)``)::

    anisotropy   (l1 - l3) / l1
    entropy      -sum(e_i ln e_i)
    linearity    (l1 - l2) / l1
    omnivariance (l1 l2 l3)^(1/3) / sum(l)
    planarity    (l2 - l3) / l1
    sphericity   l3 / l1
    surface var. l3 / sum(l)

Covariances use every grid point within ``neighborhood`` of the node, while
the per-cell statistics (means, variances, areas, count, volume, density) use
the cell's own members.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .preprocess import VoxelGrid

logger = logging.getLogger(__name__)

EIGEN_FEATURES = (
    "anisotropy",
    "eigenentropy",
    "linearity",
    "omnivariance",
    "planarity",
    "sphericity",
    "surface_variation",
)

# scalar columns used to build the cosine-similarity vector; eigenvector
# components enter as absolute values because their sign is arbitrary
SCALAR_FEATURES = (
    ("lambda1", "lambda2", "lambda3")
    + tuple(f"v{a}_{c}" for a in (1, 2, 3) for c in "xyz")
    + EIGEN_FEATURES
    + ("mean_x", "mean_y", "mean_z", "var_x", "var_y", "var_z")
    + ("area_normal", "area_vertical", "count", "volume", "density")
    + ("conn_horizontal", "conn_vertical", "conn_diagonal")
)

DEGENERATE_EPS = 1e-12
EIGEN_RTOL = 1e-13


@dataclass(frozen=True)
class FeatureVector:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # rows v1, v2, v3; v3 is the normal
    anisotropy: float
    eigenentropy: float
    linearity: float
    omnivariance: float
    planarity: float
    sphericity: float
    surface_variation: float
    mean: np.ndarray
    variance: np.ndarray
    area_normal: float
    area_vertical: float
    count: int
    volume: float
    density: float
    conn_horizontal: int
    conn_vertical: int
    conn_diagonal: int

    @property
    def normal(self) -> np.ndarray:
        return self.eigenvectors[2]

    def as_array(self, names: Sequence[str] = SCALAR_FEATURES) -> np.ndarray:
        return np.array([_scalar(self, n) for n in names], dtype=np.float64)


def _scalar(fv: FeatureVector, name: str) -> float:
    if name.startswith("lambda"):
        return float(fv.eigenvalues[int(name[-1]) - 1])
    if name[0] == "v" and name[1].isdigit():
        return abs(float(fv.eigenvectors[int(name[1]) - 1]["xyz".index(name[-1])]))
    if name.startswith("mean_"):
        return float(fv.mean["xyz".index(name[-1])])
    if name.startswith("var_"):
        return float(fv.variance["xyz".index(name[-1])])
    return float(getattr(fv, name))


@dataclass(frozen=True)
class FeatureTable:
    """Column-wise descriptors for every cell of a grid (row = cell)."""

    eigenvalues: np.ndarray  # (m, 3) descending
    eigenvectors: np.ndarray  # (m, 3, 3) rows v1, v2, v3
    anisotropy: np.ndarray
    eigenentropy: np.ndarray
    linearity: np.ndarray
    omnivariance: np.ndarray
    planarity: np.ndarray
    sphericity: np.ndarray
    surface_variation: np.ndarray
    mean: np.ndarray  # (m, 3)
    variance: np.ndarray  # (m, 3)
    area_normal: np.ndarray
    area_vertical: np.ndarray
    count: np.ndarray
    volume: np.ndarray
    density: np.ndarray
    conn_horizontal: np.ndarray
    conn_vertical: np.ndarray
    conn_diagonal: np.ndarray
    support: np.ndarray  # number of points behind each covariance

    def __len__(self) -> int:
        return len(self.count)

    def __getitem__(self, i: int) -> FeatureVector:
        kw = {}
        for f in fields(FeatureVector):
            col = getattr(self, f.name)[i]
            kw[f.name] = col if isinstance(col, np.ndarray) else col.item()
        return FeatureVector(**kw)

    def column(self, name: str) -> np.ndarray:
        if name.startswith("lambda"):
            return self.eigenvalues[:, int(name[-1]) - 1]
        if name[0] == "v" and name[1].isdigit():
            return np.abs(self.eigenvectors[:, int(name[1]) - 1, "xyz".index(name[-1])])
        if name.startswith("mean_"):
            return self.mean[:, "xyz".index(name[-1])]
        if name.startswith("var_"):
            return self.variance[:, "xyz".index(name[-1])]
        return getattr(self, name)

    def matrix(self, names: Sequence[str] = SCALAR_FEATURES) -> np.ndarray:
        return np.column_stack([np.asarray(self.column(n), dtype=np.float64) for n in names])


def eigen_descriptors(cov: np.ndarray, support: np.ndarray) -> dict:
    """Eigen-based descriptors for a stack of 3x3 covariances.

    Rows with fewer than three support points, or a vanishing leading
    eigenvalue, get the isotropic neutral values (linearity = planarity = 0,
    sphericity = 1).
    """
    cov = np.asarray(cov, dtype=np.float64).reshape(-1, 3, 3)
    support = np.broadcast_to(np.asarray(support), (len(cov),))
    w, v = np.linalg.eigh(cov)
    w = w[:, ::-1]
    # eigenvalues below rounding level of the largest one are zero; the cube
    # root in omnivariance would otherwise amplify that noise
    w = np.where(w < EIGEN_RTOL * w[:, :1], 0.0, w)
    vecs = np.transpose(v[:, :, ::-1], (0, 2, 1)).copy()
    l1, l2, l3 = w[:, 0], w[:, 1], w[:, 2]
    total = w.sum(axis=1)
    degenerate = (support < 3) | (l1 < DEGENERATE_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = w / total[:, None]
        ent = -np.where(e > 0, e * np.log(np.where(e > 0, e, 1.0)), 0.0).sum(axis=1)
        out = {
            "anisotropy": (l1 - l3) / l1,
            "eigenentropy": ent,
            "linearity": (l1 - l2) / l1,
            "omnivariance": np.cbrt(l1 * l2 * l3) / total,
            "planarity": (l2 - l3) / l1,
            "sphericity": l3 / l1,
            "surface_variation": l3 / total,
        }
    neutral = {
        "anisotropy": 0.0,
        "eigenentropy": np.log(3.0),
        "linearity": 0.0,
        "omnivariance": 1.0 / 3.0,
        "planarity": 0.0,
        "sphericity": 1.0,
        "surface_variation": 1.0 / 3.0,
    }
    for k, val in neutral.items():
        out[k] = np.where(degenerate, val, out[k])
    vecs[degenerate] = np.eye(3)
    out["eigenvalues"] = w
    out["eigenvectors"] = vecs
    return out


def point_set_descriptors(points) -> dict:
    """Eigen descriptors plus normal-plane area for a single point set."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cov = np.cov(pts.T, bias=True) if len(pts) > 1 else np.zeros((3, 3))
    d = {k: (v[0] if isinstance(v, np.ndarray) else v) for k, v in eigen_descriptors(cov[None], len(pts)).items()}
    proj = (pts - pts.mean(axis=0)) @ d["eigenvectors"][:2].T
    d["area_normal"] = float(np.ptp(proj[:, 0]) * np.ptp(proj[:, 1])) if len(pts) else 0.0
    return d


def _support_moments(grid_points: np.ndarray, centres: np.ndarray, radius: float, chunk: int = 4096):
    """Count, first and second moments of points within ``radius`` of each centre."""
    m = len(centres)
    n = np.zeros(m, dtype=np.int64)
    s1 = np.zeros((m, 3))
    s2 = np.zeros((m, 3, 3))
    if not len(grid_points):
        return n, s1, s2
    tree = cKDTree(grid_points)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        lists = tree.query_ball_point(centres[lo:hi], radius)
        lens = np.fromiter((len(x) for x in lists), dtype=np.int64, count=hi - lo)
        idx = np.fromiter((j for x in lists for j in x), dtype=np.int64, count=int(lens.sum()))
        owner = np.repeat(np.arange(hi - lo), lens)
        # centre the gathered points on their node to keep the covariance well conditioned
        d = grid_points[idx] - centres[lo:hi][owner]
        n[lo:hi] = lens
        for a in range(3):
            s1[lo:hi, a] = np.bincount(owner, weights=d[:, a], minlength=hi - lo)
            for b in range(a, 3):
                s2[lo:hi, a, b] = np.bincount(owner, weights=d[:, a] * d[:, b], minlength=hi - lo)
                s2[lo:hi, b, a] = s2[lo:hi, a, b]
    return n, s1, s2


def _connectivity(indices: np.ndarray):
    m = len(indices)
    ch = np.zeros(m, dtype=np.int64)
    cv = np.zeros(m, dtype=np.int64)
    cm = np.zeros(m, dtype=np.int64)
    if m == 0:
        return ch, cv, cm
    lo = indices.min(axis=0) - 1
    span = indices.max(axis=0) - lo + 2
    def pack(ijk):
        rel = ijk - lo
        return (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
    keys = pack(indices)
    order = np.argsort(keys)
    sk = keys[order]
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if di == dj == dk == 0:
                    continue
                nk = pack(indices + np.array([di, dj, dk]))
                pos = np.minimum(np.searchsorted(sk, nk), m - 1)
                hit = (sk[pos] == nk).astype(np.int64)
                if dk == 0 and abs(di) + abs(dj) == 1:
                    ch += hit
                elif di == 0 and dj == 0:
                    cv += hit
                else:
                    cm += hit
    return ch, cv, cm


def compute_features(cloud_xyz, grid: VoxelGrid, neighborhood: Optional[float] = None) -> FeatureTable:
    """Descriptors for every occupied cell of ``grid``.

    Args:
        cloud_xyz: coordinates of the cloud the grid was built from (a
            :class:`PointCloud` is accepted too).
        grid: voxel grid over some subset of those points.
        neighborhood: support radius for the covariance; defaults to three
            voxel widths.
    """
    xyz = getattr(cloud_xyz, "xyz", cloud_xyz)
    xyz = np.asarray(xyz, dtype=np.float64)
    if len(grid) == 0:
        raise ValueError("cannot enrich an empty grid")
    vs = grid.cell_size
    r = 3 * vs if neighborhood is None else neighborhood
    m = len(grid)
    grid_pts = xyz[grid.point_ids]
    centres = grid.positions

    n, s1, s2 = _support_moments(grid_pts, centres, r)
    safe = np.maximum(n, 1)[:, None]
    mu = s1 / safe
    cov = s2 / safe[:, :, None] - mu[:, :, None] * mu[:, None, :]
    eig = eigen_descriptors(cov, n)

    # per-cell member statistics
    cell = np.repeat(np.arange(m), grid.counts)
    cnt = grid.counts.astype(np.float64)
    d = grid_pts - centres[cell]
    var = np.column_stack([np.bincount(cell, weights=d[:, a] ** 2, minlength=m) for a in range(3)]) / cnt[:, None]

    def bbox_area(u, w):
        span_u = np.full(m, -np.inf)
        span_w = np.full(m, -np.inf)
        lo_u = np.full(m, np.inf)
        lo_w = np.full(m, np.inf)
        np.maximum.at(span_u, cell, u)
        np.minimum.at(lo_u, cell, u)
        np.maximum.at(span_w, cell, w)
        np.minimum.at(lo_w, cell, w)
        return (span_u - lo_u) * (span_w - lo_w)

    area_vertical = bbox_area(d[:, 0], d[:, 1])
    basis = eig["eigenvectors"][cell]
    pu = np.einsum("ij,ij->i", d, basis[:, 0])
    pw = np.einsum("ij,ij->i", d, basis[:, 1])
    area_normal = bbox_area(pu, pw)

    sub = vs / 4.0
    sub_ijk = np.floor(grid_pts / sub).astype(np.int64)
    sub_ijk -= sub_ijk.min(axis=0)
    span = sub_ijk.max(axis=0) + 1
    sub_key = (sub_ijk[:, 0] * span[1] + sub_ijk[:, 1]) * span[2] + sub_ijk[:, 2]
    uniq = np.unique(np.column_stack([cell, sub_key]), axis=0)
    volume = np.bincount(uniq[:, 0], minlength=m) * sub**3

    ch, cv, cm = _connectivity(grid.indices)
    return FeatureTable(
        eigenvalues=eig["eigenvalues"],
        eigenvectors=eig["eigenvectors"],
        **{k: eig[k] for k in EIGEN_FEATURES},
        mean=centres.copy(),
        variance=var,
        area_normal=area_normal,
        area_vertical=area_vertical,
        count=grid.counts.copy(),
        volume=volume,
        density=cnt / vs**3,
        conn_horizontal=ch,
        conn_vertical=cv,
        conn_diagonal=cm,
        support=n,
    )


# ---------------------------------------------------------------------------
# edge weights


@dataclass(frozen=True)
class FeatureNormalizer:
    """Min-max scaling of each feature column to [0, 1]."""

    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "FeatureNormalizer":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix.min(axis=0), matrix.max(axis=0))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        span = self.high - self.low
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (x - self.low) / safe, 0.0)


def cosine_similarity(a: np.ndarray, b: np.ndarray):
    """Row-wise cosine similarity; zero-norm rows give ``nan``."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    dot = np.einsum("ij,ij->i", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = dot / (na * nb)
    return np.where((na > 0) & (nb > 0), np.clip(s, -1.0, 1.0), np.nan)


def cosine_weight(fa, fb, normalizer: Optional[FeatureNormalizer] = None) -> float:
    """Edge weight ``1 - S_C`` so that similar nodes are cheap to connect.

    ``fa``/``fb`` are :class:`FeatureVector` instances or plain arrays.  A
    zero-norm vector yields the neutral weight 1.
    """
    a = fa.as_array() if isinstance(fa, FeatureVector) else np.asarray(fa, dtype=np.float64)
    b = fb.as_array() if isinstance(fb, FeatureVector) else np.asarray(fb, dtype=np.float64)
    if normalizer is not None:
        a, b = normalizer(a), normalizer(b)
    s = cosine_similarity(a, b)[0]
    if np.isnan(s):
        logger.warning("zero-norm feature vector; using neutral edge weight")
        return 1.0
    return float(1.0 - s)


def density_weight(fa, fb, m_max) -> float:
    """Normalised point-count difference ``|m_a - m_b| / m_max``."""
    ma = fa.count if isinstance(fa, FeatureVector) else fa
    mb = fb.count if isinstance(fb, FeatureVector) else fb
    if m_max <= 0:
        raise ValueError("m_max must be positive (empty graph?)")
    return abs(float(ma) - float(mb)) / float(m_max)


def cosine_edge_weights(table: FeatureTable, a: np.ndarray, b: np.ndarray,
                        names: Sequence[str] = SCALAR_FEATURES) -> np.ndarray:
    """Vectorised :func:`cosine_weight` over edge endpoint arrays."""
    mat = table.matrix(names)
    norm = FeatureNormalizer.fit(mat)(mat)
    s = cosine_similarity(norm[a], norm[b])
    bad = np.isnan(s)
    if bad.any():
        logger.warning("%d edges touch zero-norm feature vectors; weight set to 1", int(bad.sum()))
    return np.where(bad, 1.0, 1.0 - s)


def density_edge_weights(counts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    m_max = counts.max() if len(counts) else 0
    if m_max <= 0:
        raise ValueError("m_max must be positive (empty graph?)")
    return np.abs(counts[a] - counts[b]) / m_max
