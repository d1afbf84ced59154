"""Brute-force reference implementations used as test oracles.

These deliberately share no code with the package: plain Python loops,
exhaustive enumeration and textbook formulas.
"""

import math
from collections import Counter, defaultdict

import numpy as np


def random_graph(rng, max_nodes=12, p=None):
    """Small random graph with integer edge costs that dominate node distances.

    Positions lie in the unit cube so every cost (>= 2) exceeds the straight
    line between its endpoints, keeping a Euclidean A* heuristic admissible.
    Integer costs make float path sums exact and create plenty of ties.
    """
    n = int(rng.integers(1, max_nodes + 1))
    if p is None:
        # dense large graphs have too many simple paths to enumerate
        p = rng.uniform(0.15, 0.6 if n <= 8 else 0.4)
    pos = rng.uniform(0, 1, (n, 3))
    edges, costs = [], []
    for a in range(n):
        for b in range(a + 1, n):
            if rng.uniform() < p:
                edges.append((a, b))
                costs.append(float(rng.integers(2, 6)))
    return pos, edges, costs


def adjacency(n, edges, costs):
    adj = defaultdict(dict)
    for (a, b), c in zip(edges, costs):
        adj[a][b] = c
        adj[b][a] = c
    return adj


def all_simple_paths(adj, s, t):
    out = []

    def dfs(u, path, seen):
        if u == t:
            out.append(list(path))
            return
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                path.append(v)
                dfs(v, path, seen)
                path.pop()
                seen.discard(v)

    dfs(s, [s], {s})
    return out


def path_cost(adj, path):
    return sum(adj[a][b] for a, b in zip(path, path[1:]))


def canonical_path(adj, s, t):
    """Cheapest path; among equals the lexicographically smallest when read from t back to s."""
    if s == t:
        return 0.0, [s]
    paths = all_simple_paths(adj, s, t)
    if not paths:
        return math.inf, []
    best = min(path_cost(adj, p) for p in paths)
    optimal = [p for p in paths if path_cost(adj, p) == best]
    return best, min(optimal, key=lambda p: p[::-1])


def canonical_paths_from(n, adj, s):
    """``canonical_path`` to every node at once from one exhaustive DFS."""
    best = [(math.inf, None)] * n
    best[s] = (0.0, [s])

    def dfs(u, path, cost, seen):
        for v in adj[u]:
            if v in seen:
                continue
            c = cost + adj[u][v]
            path.append(v)
            cur_c, cur_p = best[v]
            if c < cur_c or (c == cur_c and path[::-1] < cur_p[::-1]):
                best[v] = (c, list(path))
            seen.add(v)
            dfs(v, path, c, seen)
            seen.discard(v)
            path.pop()

    dfs(s, [s], 0.0, {s})
    return [(c, p if p is not None else []) for c, p in best]


def path_counts(n, adj, s, targets):
    """Occurrences of each node over the canonical paths from ``s`` to each target."""
    paths = canonical_paths_from(n, adj, s)
    counts = [0] * n
    for t in targets:
        for v in paths[t][1]:
            counts[v] += 1
    return counts


def entropy(labels):
    n = len(labels)
    return -sum(c / n * math.log(c / n) for c in Counter(labels).values())


def conditional_entropy(a, b):
    """H(a | b) by explicit summation."""
    n = len(a)
    joint = Counter(zip(a, b))
    nb = Counter(b)
    return -sum(c / n * math.log(c / nb[y]) for (x, y), c in joint.items())


def v_measure(pred, truth):
    ht, hp = entropy(truth), entropy(pred)
    h = 1.0 if ht == 0 else 1 - conditional_entropy(truth, pred) / ht
    c = 1.0 if hp == 0 else 1 - conditional_entropy(pred, truth) / hp
    return h, c, (0.0 if h + c == 0 else 2 * h * c / (h + c))


def lateral_floor(xyz, radius):
    """Minimum z within lateral distance ``radius`` of every point, O(n^2)."""
    d2 = ((xyz[:, None, :2] - xyz[None, :, :2]) ** 2).sum(axis=2)
    z = np.where(d2 <= radius * radius, xyz[None, :, 2], np.inf)
    return z.min(axis=1)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
