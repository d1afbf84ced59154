"""Radius graph over voxel nodes and aggregated shortest-path search.

Shortest paths are made unique by a canonical tie-break: every node's
predecessor is the smallest-id neighbour that lies on *some* optimal path to
it.  Read from the target back to the source, the canonical path is therefore
the lexicographically smallest optimal node sequence.  The single-pair A*
search and the single-source aggregation share this rule, so the per-node
path counts of one equal the occurrence counts of the other.
"""

from __future__ import annotations

import heapq
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .enrich import FeatureTable, cosine_edge_weights, density_edge_weights
from .preprocess import VoxelGrid

logger = logging.getLogger(__name__)

WEIGHTINGS = ("none", "density", "cosine")

# relative slack when deciding that two path costs are equal
TIE_RTOL = 1e-12


class AnchorError(ValueError):
    """A trunk point has no graph node close enough to start a search from."""


@dataclass(frozen=True)
class TreeGraph:
    """Undirected radius graph; immutable once built.

    ``adjacency`` is a symmetric CSR matrix whose entry ``(a, b)`` is the
    traversal cost of the edge.  Costs are ``length * (1 + weight)`` so they
    are never shorter than the straight-line distance.
    """

    positions: np.ndarray
    cells: np.ndarray
    counts: np.ndarray
    adjacency: sparse.csr_matrix
    edge_radius: float
    weighting: str = "none"
    features: Optional[FeatureTable] = None

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    def neighbors(self, node: int):
        lo, hi = self.adjacency.indptr[node], self.adjacency.indptr[node + 1]
        return self.adjacency.indices[lo:hi], self.adjacency.data[lo:hi]

    def edge_list(self) -> np.ndarray:
        """``(a, b, cost)`` rows with ``a < b``, sorted."""
        coo = sparse.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.column_stack([coo.row[order], coo.col[order], coo.data[order]])


def _make_graph(positions, a, b, cost, **kw) -> TreeGraph:
    m = len(positions)
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    data = np.concatenate([cost, cost])
    adj = sparse.csr_matrix((data, (rows, cols)), shape=(m, m))
    adj.sort_indices()
    return TreeGraph(positions=positions, adjacency=adj, **kw)


def build_graph(grid: VoxelGrid, edge_radius: float = 0.15, weighting: str = "none",
                features: Optional[FeatureTable] = None) -> TreeGraph:
    """Connect every pair of voxel nodes closer than ``edge_radius``.

    Args:
        grid: voxel grid whose cell means become the nodes (cell order kept).
        edge_radius: connection radius in metres.
        weighting: ``none`` (pure length), ``density`` (point-count contrast)
            or ``cosine`` (feature dissimilarity, needs ``features``).
        features: descriptors from :func:`compute_features`, required for
            cosine weighting.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    if len(grid) == 0:
        raise ValueError("cannot build a graph from an empty grid")
    if edge_radius < grid.cell_size:
        warnings.warn(f"edge radius {edge_radius} is below the voxel size {grid.cell_size}; "
                      "the graph will be poorly connected", stacklevel=2)
    pos = grid.positions
    pairs = cKDTree(pos).query_pairs(edge_radius, output_type="ndarray")
    if len(pairs):
        # query_pairs carries a rounding slack; enforce the closed ball exactly
        length = np.sqrt(((pos[pairs[:, 0]] - pos[pairs[:, 1]]) ** 2).sum(axis=1))
        keep = length <= edge_radius
        pairs, length = pairs[keep], length[keep]
    else:
        pairs = np.empty((0, 2), dtype=np.int64)
        length = np.empty(0)
    a, b = pairs[:, 0], pairs[:, 1]

    if weighting == "none":
        weight = np.zeros(len(length))
    elif weighting == "density":
        weight = density_edge_weights(grid.counts, a, b)
    else:
        if features is None:
            raise ValueError("cosine weighting needs the enrichment feature table")
        weight = cosine_edge_weights(features, a, b)
    cost = length * (1.0 + weight)
    logger.debug("graph: %d nodes, %d edges", len(pos), len(cost))
    return _make_graph(pos, a, b, cost, cells=grid.indices, counts=grid.counts,
                       edge_radius=edge_radius, weighting=weighting, features=features)


def graph_from_edges(positions, edges, costs=None) -> TreeGraph:
    """Build a graph from an explicit edge list (tests, small examples)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if costs is None:
        costs = np.linalg.norm(positions[edges[:, 0]] - positions[edges[:, 1]], axis=1)
    costs = np.asarray(costs, dtype=np.float64)
    if (costs <= 0).any():
        raise ValueError("edge costs must be positive")
    m = len(positions)
    return _make_graph(positions, edges[:, 0], edges[:, 1], costs,
                       cells=np.zeros((m, 3), np.int64), counts=np.ones(m, np.int64),
                       edge_radius=np.inf, weighting="none")


# ---------------------------------------------------------------------------
# single pair


@dataclass(frozen=True)
class Path:
    nodes: list
    cost: float

    def __bool__(self) -> bool:
        return bool(self.nodes)

    @property
    def found(self) -> bool:
        return bool(self.nodes)


def _tight(du, w, dv):
    return du + w <= dv + TIE_RTOL * max(1.0, abs(dv))


def shortest_path(graph: TreeGraph, source: int, target: int, heuristic: bool = True) -> Path:
    """A* search for the canonical cheapest path from ``source`` to ``target``.

    The heuristic is the straight-line distance to the target, admissible and
    consistent because edge costs never undercut edge lengths.  The search
    keeps expanding until every node that could lie on an optimal path is
    settled, then walks back from the target taking the smallest-id tight
    predecessor at each step.

    Returns an empty :class:`Path` with infinite cost if no path exists.
    """
    m = len(graph)
    if not (0 <= source < m and 0 <= target < m):
        raise IndexError("source/target out of range")
    if source == target:
        return Path([source], 0.0)
    indptr = graph.adjacency.indptr
    indices = graph.adjacency.indices
    data = graph.adjacency.data
    pos = graph.positions
    goal = pos[target]

    def h(v):
        if not heuristic:
            return 0.0
        d = pos[v] - goal
        return float(np.sqrt(d @ d))

    g = {source: 0.0}
    settled = set()
    heap = [(h(source), 0.0, source)]
    best = np.inf
    while heap:
        f, gu, u = heapq.heappop(heap)
        if u in settled or gu > g[u]:
            continue
        if f > best + TIE_RTOL * max(1.0, best):
            break
        settled.add(u)
        if u == target:
            best = gu
            continue
        for k in range(indptr[u], indptr[u + 1]):
            v = int(indices[k])
            nd = gu + data[k]
            if v not in g or nd < g[v]:
                g[v] = nd
                heapq.heappush(heap, (nd + h(v), nd, v))
    if target not in settled:
        return Path([], np.inf)

    path = [target]
    v = target
    while v != source:
        dv = g[v]
        choice = None
        for k in range(indptr[v], indptr[v + 1]):
            u = int(indices[k])
            if u in settled and g[u] < dv and _tight(g[u], data[k], dv):
                if choice is None or u < choice:
                    choice = u
        v = choice
        path.append(v)
    path.reverse()
    return Path(path, float(g[target]))


# ---------------------------------------------------------------------------
# single source, all targets


@dataclass(frozen=True)
class SourceTree:
    """Canonical shortest-path tree from one source."""

    source: int
    cost: np.ndarray  # inf when unreachable
    predecessor: np.ndarray  # -1 at the source and at unreachable nodes


def source_tree(graph: TreeGraph, source: int) -> SourceTree:
    dist = dijkstra(graph.adjacency, directed=True, indices=int(source))
    return SourceTree(int(source), dist, canonical_predecessors(graph, dist))


def canonical_predecessors(graph: TreeGraph, dist: np.ndarray) -> np.ndarray:
    """Smallest-id tight predecessor of every reached node."""
    adj = graph.adjacency
    m = len(graph)
    u = np.repeat(np.arange(m), np.diff(adj.indptr))
    v = adj.indices
    w = adj.data
    du, dv = dist[u], dist[v]
    finite = np.isfinite(du) & np.isfinite(dv)
    tight = finite & (du < dv) & (du + w <= dv + TIE_RTOL * np.maximum(1.0, np.abs(np.where(finite, dv, 0))))
    pred = np.full(m, m, dtype=np.int64)
    np.minimum.at(pred, v[tight], u[tight])
    pred[pred == m] = -1
    return pred


def subtree_counts(tree: SourceTree, targets: Optional[np.ndarray] = None) -> np.ndarray:
    """Number of target-terminated canonical paths passing through each node."""
    m = len(tree.cost)
    reach = np.isfinite(tree.cost)
    if targets is None:
        count = reach.astype(np.int64)
    else:
        count = np.zeros(m, dtype=np.int64)
        t = np.asarray(targets, dtype=np.int64)
        count[t] = 1
        count &= reach
    order = np.argsort(tree.cost, kind="stable")[::-1]
    order = order[reach[order]]
    pred = tree.predecessor.tolist()
    cnt = count.tolist()
    for v in order.tolist():
        p = pred[v]
        if p >= 0:
            cnt[p] += cnt[v]
    return np.asarray(cnt, dtype=np.int64)


@dataclass(frozen=True)
class PathAggregate:
    """Per-node statistics over the canonical paths from several sources.

    Attributes:
        sources: node id of each source, in the order given.
        path_count: per node, the maximum over sources of the number of
            target paths traversing it.
        path_count_sum: the same counts summed over sources.
        min_cost: cheapest cost from any source (inf if unreachable).
        best_source: index into ``sources`` achieving ``min_cost`` (lowest
            index on ties), -1 if unreachable.
        source_costs: ``(k, m)`` per-source costs.
        source_counts: ``(k, m)`` per-source path counts.
    """

    sources: np.ndarray
    path_count: np.ndarray
    path_count_sum: np.ndarray
    min_cost: np.ndarray
    best_source: np.ndarray
    source_costs: np.ndarray
    source_counts: np.ndarray

    @property
    def max_count(self) -> int:
        return int(self.path_count.max()) if len(self.path_count) else 0

    @property
    def reached(self) -> np.ndarray:
        return np.isfinite(self.min_cost)


def aggregate_paths(graph: TreeGraph, sources: Sequence[int], targets=None, workers: int = 1) -> PathAggregate:
    """Aggregate canonical shortest paths from every source to every target.

    Each source is searched independently (in parallel when ``workers > 1``);
    results are merged in source order so the output does not depend on the
    worker count.
    """
    sources = np.asarray(sources, dtype=np.int64).ravel()
    if len(sources) == 0:
        raise ValueError("aggregate_paths needs at least one source")

    def one(s):
        tree = source_tree(graph, int(s))
        return tree.cost, subtree_counts(tree, targets)

    if workers > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, sources))
    else:
        results = [one(s) for s in sources]
    costs = np.vstack([r[0] for r in results])
    counts = np.vstack([r[1] for r in results])
    best = np.argmin(costs, axis=0)  # first minimum = lowest source index
    min_cost = costs[best, np.arange(costs.shape[1])]
    best = np.where(np.isfinite(min_cost), best, -1)
    return PathAggregate(
        sources=sources,
        path_count=counts.max(axis=0),
        path_count_sum=counts.sum(axis=0),
        min_cost=min_cost,
        best_source=best,
        source_costs=costs,
        source_counts=counts,
    )


def multi_source_costs(graph: TreeGraph, sources: Sequence[int]) -> np.ndarray:
    """Cheapest cost from any of ``sources`` to every node."""
    sources = np.asarray(sources, dtype=np.int64).ravel()
    if len(sources) == 0:
        return np.full(len(graph), np.inf)
    return dijkstra(graph.adjacency, directed=True, indices=sources, min_only=True)


def anchor_points(graph: TreeGraph, points, max_dist: float, names=None) -> np.ndarray:
    """Nearest graph node to each point, which must lie within ``max_dist``.

    Raises:
        AnchorError: naming the first point with no node in range.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.empty(0, dtype=np.int64)
    d, idx = cKDTree(graph.positions).query(pts, k=1, distance_upper_bound=max_dist)
    missing = np.flatnonzero(~np.isfinite(d))
    if len(missing):
        i = int(missing[0])
        label = names[i] if names is not None else i
        raise AnchorError(f"trunk {label} at {pts[i].round(3).tolist()} has no graph node within {max_dist} m")
    return idx.astype(np.int64)
