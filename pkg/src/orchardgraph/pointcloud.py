"""Point cloud data model, CSV/binary IO and radius-neighbour indexing."""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Union

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

GROUND_ID = 0
UNKNOWN_ID = -1

CSV_COLUMNS = ("x", "y", "z", "tree_id", "class", "source_id")

# packed little-endian record: f64 x, f64 y, f64 z, i32 tree_id, u8 class, i32 source_id
BINARY_DTYPE = np.dtype(
    [("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("tree_id", "<i4"), ("class", "u1"), ("source_id", "<i4")],
    align=False,
)
assert BINARY_DTYPE.itemsize == 33

PathLike = Union[str, Path]


class Matter(enum.IntEnum):
    GROUND = 0
    LEAFY = 1
    WOODY = 2
    UNKNOWN = 255


class CloudFormatError(ValueError):
    """Raised when a cloud file cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PointRecord(NamedTuple):
    x: float
    y: float
    z: float
    tree_id: Optional[int] = None
    matter: Optional[Matter] = None
    source_id: Optional[int] = None


@dataclass(eq=False)
class PointCloud:
    """An ordered set of 3D points with optional per-point labels.

    Coordinates are held as an ``(n, 3)`` float64 array.  Label arrays are
    either all absent or all present; supplying any one of them fills the
    others with their "unknown" defaults (tree id -1, class unknown, source 0)
    so that every record is complete and round-trips through the file formats.

    Point order is significant: every pipeline stage returns labels aligned
    with it.
    """

    xyz: np.ndarray
    tree_id: Optional[np.ndarray] = None
    matter: Optional[np.ndarray] = None
    source_id: Optional[np.ndarray] = None
    _bounds: Optional[tuple] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must have shape (n, 3), got {xyz.shape}")
        if not np.isfinite(xyz).all():
            bad = int(np.flatnonzero(~np.isfinite(xyz).all(axis=1))[0])
            raise ValueError(f"non-finite coordinate at point {bad}")
        self.xyz = xyz
        n = len(xyz)
        if self.tree_id is None and self.matter is None and self.source_id is None:
            return
        self.tree_id = _label_array(self.tree_id, n, np.int32, UNKNOWN_ID, "tree_id")
        self.matter = _label_array(self.matter, n, np.uint8, Matter.UNKNOWN, "matter")
        self.source_id = _label_array(self.source_id, n, np.int32, 0, "source_id")

    def __len__(self) -> int:
        return len(self.xyz)

    def __getitem__(self, i: int) -> PointRecord:
        x, y, z = (float(v) for v in self.xyz[i])
        if not self.labeled:
            return PointRecord(x, y, z)
        return PointRecord(x, y, z, int(self.tree_id[i]), Matter(int(self.matter[i])), int(self.source_id[i]))

    def __iter__(self) -> Iterator[PointRecord]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        if self.labeled != other.labeled or not np.array_equal(self.xyz, other.xyz):
            return False
        if not self.labeled:
            return True
        return (
            np.array_equal(self.tree_id, other.tree_id)
            and np.array_equal(self.matter, other.matter)
            and np.array_equal(self.source_id, other.source_id)
        )

    @property
    def labeled(self) -> bool:
        return self.tree_id is not None

    @property
    def bounds(self) -> tuple:
        """Axis-aligned bounding box as ``(min_xyz, max_xyz)``."""
        if self._bounds is None:
            if len(self) == 0:
                self._bounds = (np.full(3, np.nan), np.full(3, np.nan))
            else:
                self._bounds = (self.xyz.min(axis=0), self.xyz.max(axis=0))
        return self._bounds

    @classmethod
    def from_records(cls, records) -> "PointCloud":
        records = list(records)
        xyz = np.array([[r.x, r.y, r.z] for r in records], dtype=np.float64).reshape(-1, 3)
        if not records or all(r.tree_id is None and r.matter is None and r.source_id is None for r in records):
            return cls(xyz)
        tree_id = [UNKNOWN_ID if r.tree_id is None else r.tree_id for r in records]
        matter = [Matter.UNKNOWN if r.matter is None else r.matter for r in records]
        source = [0 if r.source_id is None else r.source_id for r in records]
        return cls(xyz, np.array(tree_id), np.array(matter), np.array(source))

    def subset(self, ids) -> "PointCloud":
        ids = np.asarray(ids)
        if not self.labeled:
            return PointCloud(self.xyz[ids])
        return PointCloud(self.xyz[ids], self.tree_id[ids], self.matter[ids], self.source_id[ids])

    def with_labels(self, tree_id=None, matter=None) -> "PointCloud":
        """Return a copy with tree ids and/or matter classes replaced."""
        n = len(self)
        base_tree = self.tree_id if self.labeled else np.full(n, UNKNOWN_ID, np.int32)
        base_matter = self.matter if self.labeled else np.full(n, Matter.UNKNOWN, np.uint8)
        base_source = self.source_id if self.labeled else np.zeros(n, np.int32)
        return PointCloud(
            self.xyz,
            base_tree if tree_id is None else tree_id,
            base_matter if matter is None else matter,
            base_source,
        )


def _label_array(values, n, dtype, default, name) -> np.ndarray:
    if values is None:
        return np.full(n, default, dtype=dtype)
    arr = np.asarray(values)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
    info = np.iinfo(dtype)
    if arr.size and (arr.min() < info.min or arr.max() > info.max):
        raise ValueError(f"{name} out of range for {np.dtype(dtype).name}")
    return arr.astype(dtype, copy=False)


# ---------------------------------------------------------------------------
# IO


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise ValueError(f"unknown format {fmt!r}")
        return fmt
    return "binary" if path.suffix.lower() in (".bin", ".dat") else "csv"


def read_cloud(path: PathLike, format: Optional[str] = None) -> PointCloud:
    """Read a cloud from CSV or packed binary.

    CSV files hold ``x,y,z[,tree_id,class,source_id]`` with an optional header
    line.  ``format`` defaults to binary for ``.bin``/``.dat`` suffixes and CSV
    otherwise.

    Raises:
        CloudFormatError: on a malformed row or a non-finite coordinate; the
            message names the 1-based line number.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "binary":
        return _read_binary(path)
    return _read_csv(path)


def write_cloud(cloud: PointCloud, path: PathLike, format: Optional[str] = None) -> None:
    """Write a cloud; the file re-reads into an equal cloud.

    CSV coordinates use 17 significant digits, which round-trips float64
    exactly.  Binary always writes full records, so an unlabeled cloud comes
    back with default labels.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "binary":
        _write_binary(cloud, path)
    else:
        _write_csv(cloud, path)


def _read_binary(path: Path) -> PointCloud:
    size = path.stat().st_size
    if size % BINARY_DTYPE.itemsize:
        raise CloudFormatError(f"{path}: size {size} is not a multiple of the {BINARY_DTYPE.itemsize}-byte record")
    rec = np.fromfile(path, dtype=BINARY_DTYPE)
    xyz = np.column_stack([rec["x"], rec["y"], rec["z"]])
    finite = np.isfinite(xyz).all(axis=1)
    if not finite.all():
        raise CloudFormatError(f"non-finite coordinate in record {int(np.flatnonzero(~finite)[0])}")
    return PointCloud(xyz, rec["tree_id"], rec["class"], rec["source_id"])


def _write_binary(cloud: PointCloud, path: Path) -> None:
    labeled = cloud.with_labels() if not cloud.labeled else cloud
    rec = np.empty(len(cloud), dtype=BINARY_DTYPE)
    rec["x"], rec["y"], rec["z"] = cloud.xyz.T
    rec["tree_id"] = labeled.tree_id
    rec["class"] = labeled.matter
    rec["source_id"] = labeled.source_id
    rec.tofile(path)


def _is_header(line: str) -> bool:
    first = line.split(",")[0].strip()
    try:
        float(first)
    except ValueError:
        return True
    return False


def _read_csv(path: Path) -> PointCloud:
    with open(path, "r", newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    start = 1 if lines and _is_header(lines[0]) else 0
    body = [ln for ln in lines[start:]]
    # drop trailing blank lines only; interior blanks are malformed rows
    while body and not body[-1].strip():
        body.pop()
    if not body:
        return PointCloud(np.empty((0, 3)))
    try:
        data = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError:
        data = None
    ncols = data.shape[1] if data is not None else None
    if data is None or ncols < 3 or ncols > 6 or data.shape[0] != len(body):
        _raise_first_bad_row(body, start)
    finite = np.isfinite(data[:, :3]).all(axis=1)
    if not finite.all():
        row = int(np.flatnonzero(~finite)[0])
        raise CloudFormatError("non-finite coordinate", line=start + row + 1)
    xyz = data[:, :3]
    if ncols == 3:
        return PointCloud(xyz)
    labels = data[:, 3:]
    if not np.isfinite(labels).all() or not np.array_equal(labels, np.round(labels)):
        row = int(np.flatnonzero(~(np.isfinite(labels) & (labels == np.round(labels))).all(axis=1))[0])
        raise CloudFormatError("label columns must be integers", line=start + row + 1)
    tree_id = labels[:, 0].astype(np.int64)
    matter = labels[:, 1].astype(np.int64) if ncols > 4 else None
    source = labels[:, 2].astype(np.int64) if ncols > 5 else None
    if matter is not None:
        valid = np.isin(matter, [int(m) for m in Matter])
        if not valid.all():
            row = int(np.flatnonzero(~valid)[0])
            raise CloudFormatError(f"invalid class code {matter[row]}", line=start + row + 1)
    return PointCloud(xyz, tree_id, matter, source)


def _raise_first_bad_row(body, offset):
    expected = None
    for i, line in enumerate(body):
        parts = line.split(",")
        lineno = offset + i + 1
        if not 3 <= len(parts) <= 6:
            raise CloudFormatError(f"expected 3 to 6 columns, got {len(parts)}", line=lineno)
        if expected is None:
            expected = len(parts)
        elif len(parts) != expected:
            raise CloudFormatError(f"expected {expected} columns, got {len(parts)}", line=lineno)
        try:
            [float(p) for p in parts]
        except ValueError:
            raise CloudFormatError(f"cannot parse row {line!r}", line=lineno) from None
    raise CloudFormatError("malformed file")


def _write_csv(cloud: PointCloud, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        if not cloud.labeled:
            fh.write(",".join(CSV_COLUMNS[:3]) + "\n")
            if len(cloud):
                np.savetxt(fh, cloud.xyz, fmt="%.17g", delimiter=",")
            return
        fh.write(",".join(CSV_COLUMNS) + "\n")
        if not len(cloud):
            return
        # chunked so large clouds don't materialise one giant object array
        step = 200_000
        for lo in range(0, len(cloud), step):
            hi = min(lo + step, len(cloud))
            xyz = cloud.xyz[lo:hi]
            cols = [
                np.char.mod("%.17g", xyz[:, 0]),
                np.char.mod("%.17g", xyz[:, 1]),
                np.char.mod("%.17g", xyz[:, 2]),
                cloud.tree_id[lo:hi].astype(str),
                cloud.matter[lo:hi].astype(str),
                cloud.source_id[lo:hi].astype(str),
            ]
            rows = cols[0]
            for c in cols[1:]:
                rows = np.char.add(np.char.add(rows, ","), c)
            fh.write("\n".join(rows.tolist()))
            fh.write("\n")


# ---------------------------------------------------------------------------
# spatial index


class SpatialIndex:
    """Immutable radius-query index over a set of 3D positions.

    Backed by a k-d tree; results are exact Euclidean balls returned in
    ascending element-id order.
    """

    def __init__(self, positions):
        if isinstance(positions, PointCloud):
            positions = positions.xyz
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self._tree = cKDTree(self.positions) if len(self.positions) else None

    def __len__(self) -> int:
        return len(self.positions)

    def query(self, q, r: float) -> np.ndarray:
        if r <= 0:
            raise ValueError("radius must be positive")
        if self._tree is None:
            return np.empty(0, dtype=np.int64)
        q = np.asarray(q, dtype=np.float64)
        ids = np.asarray(self._tree.query_ball_point(q, r * (1 + 1e-9)), dtype=np.int64)
        # widened query, then the closed ball is enforced with one fixed formula
        if len(ids):
            d2 = ((self.positions[ids] - q) ** 2).sum(axis=1)
            ids = ids[d2 <= r * r]
        return np.sort(ids)

    def nearest(self, q, max_dist: float = np.inf):
        """Return ``(id, distance)`` of the nearest element, or ``(-1, inf)``."""
        if self._tree is None:
            return -1, np.inf
        d, i = self._tree.query(np.asarray(q, dtype=np.float64), k=1, distance_upper_bound=max_dist)
        if not np.isfinite(d):
            return -1, np.inf
        return int(i), float(d)

    @property
    def kdtree(self) -> cKDTree:
        return self._tree


def radius_neighbors(index: SpatialIndex, query, r: float) -> list:
    """Ids of all indexed elements within Euclidean distance ``r`` of ``query``."""
    return index.query(query, r).tolist()


# ---------------------------------------------------------------------------
# trunk points


@dataclass(frozen=True)
class TrunkPoint:
    """Per-tree search origin at the trunk/ground interface."""

    position: tuple
    tree_id: int

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(np.isfinite(pos)):
            raise ValueError(f"trunk position must be three finite numbers, got {self.position!r}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "tree_id", int(self.tree_id))


def trunk_positions(trunks) -> np.ndarray:
    return np.array([t.position for t in trunks], dtype=np.float64).reshape(-1, 3)


def read_trunks(path: PathLike) -> list:
    """Read ``x,y,z[,tree_id]`` rows; missing ids are numbered from 1."""
    cloud = _read_csv(Path(path))
    if cloud.labeled:
        ids = cloud.tree_id.tolist()
    else:
        ids = list(range(1, len(cloud) + 1))
    return [TrunkPoint(tuple(p), i) for p, i in zip(cloud.xyz.tolist(), ids)]


def write_trunks(trunks, path: PathLike) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("x,y,z,tree_id\n")
        for t in trunks:
            fh.write("%.17g,%.17g,%.17g,%d\n" % (*t.position, t.tree_id))
