"""HDBSCAN over a precomputed distance matrix.

Pipeline: core distances -> mutual reachability -> Prim MST -> single-linkage
hierarchy -> condensed tree -> excess-of-mass selection -> labels. Labelling
follows the conventions of the scikit-learn / hdbscan reference code, including
its treatment of the root cluster when single-cluster selection is enabled.
"""

from __future__ import annotations

import warnings
from collections import deque

import numpy as np

from nerfpc.errors import DegenerateInputWarning


def core_distances(dist: np.ndarray, min_samples: int) -> np.ndarray:
    # min_samples counts the point itself (its zero self-distance).
    k = min(min_samples, dist.shape[0]) - 1
    return np.partition(dist, k, axis=1)[:, k]


def mutual_reachability(dist: np.ndarray, min_samples: int) -> np.ndarray:
    core = core_distances(dist, min_samples)
    return np.maximum(dist, np.maximum(core[:, None], core[None, :]))


def prim_mst(weights: np.ndarray) -> np.ndarray:
    """Dense Prim's algorithm; returns (n-1, 3) rows of (a, b, weight).

    Each edge joins the newly added node to the node added just before it
    (MST-linkage). The recorded weight is the new node's distance to the
    whole tree, so the single-linkage partitions are unchanged, and merges
    at tied weights happen in the same order as in the reference code.
    """
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    edges = np.empty((n - 1, 3))
    current = 0
    for k in range(n - 1):
        in_tree[current] = True
        best = np.minimum(best, weights[current])
        masked = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(masked))
        edges[k] = (current, nxt, best[nxt])
        current = nxt
    return edges


def single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """Scipy-style linkage rows (left, right, distance, size) from MST edges."""
    # numpy's default sort, as in the reference code, so merges at tied weights come in the same order
    order = np.argsort(mst[:, 2])
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.intp)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    out = np.empty((n - 1, 4))
    for k, idx in enumerate(order):
        a, b, d = mst[idx]
        ra, rb = find(int(a)), find(int(b))
        new = n + k
        out[k] = (ra, rb, d, size[ra] + size[rb])
        parent[ra] = parent[rb] = new
        size[new] = size[ra] + size[rb]
    return out


def _leaves_under(hierarchy: np.ndarray, node: int, n: int) -> list[int]:
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            left, right = hierarchy[x - n, :2]
            stack.extend((int(left), int(right)))
    return out


def condense_tree(hierarchy: np.ndarray, min_cluster_size: int) -> list[tuple[int, int, float, int]]:
    """Condensed tree as (parent, child, lambda, child_size) rows."""
    n = hierarchy.shape[0] + 1
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    rows = []
    queue = deque([root])
    while queue:
        node = queue.popleft()
        if node < n:
            continue
        left, right, dist, _ = hierarchy[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / dist if dist > 0.0 else np.inf
        left_count = int(hierarchy[left - n, 3]) if left >= n else 1
        right_count = int(hierarchy[right - n, 3]) if right >= n else 1
        parent = relabel[node]
        if left_count >= min_cluster_size and right_count >= min_cluster_size:
            for child, count in ((left, left_count), (right, right_count)):
                relabel[child] = next_label
                rows.append((parent, next_label, lam, count))
                next_label += 1
                queue.append(child)
        else:
            for child, count in ((left, left_count), (right, right_count)):
                if count >= min_cluster_size:
                    relabel[child] = parent
                    queue.append(child)
                else:
                    rows.extend((parent, leaf, lam, 1) for leaf in _leaves_under(hierarchy, child, n))
    return rows


def _stability(rows, root: int) -> dict[int, float]:
    births = {root: 0.0}
    for parent, child, lam, size in rows:
        if size > 1:
            births[child] = lam
    stab = {c: 0.0 for c in births}
    with np.errstate(invalid="ignore"):
        for parent, child, lam, size in rows:
            stab[parent] += (lam - births[parent]) * size
    return stab


def select_clusters(rows, n: int, allow_single_cluster: bool) -> set[int]:
    """Excess-of-mass selection over the condensed cluster tree."""
    root = n
    stability = _stability(rows, root)
    children: dict[int, list[int]] = {c: [] for c in stability}
    for parent, child, _, size in rows:
        if size > 1:
            children[parent].append(child)
    nodes = sorted(stability, reverse=True)
    if not allow_single_cluster:
        nodes = nodes[:-1]
    is_cluster = {c: True for c in nodes}
    for node in nodes:
        subtree = float(np.sum([stability[c] for c in children[node]]))
        if subtree > stability[node]:
            is_cluster[node] = False
            stability[node] = subtree
        else:
            stack = list(children[node])
            while stack:
                c = stack.pop()
                is_cluster[c] = False
                stack.extend(children[c])
    return {c for c, keep in is_cluster.items() if keep}


def label_points(rows, n: int, clusters: set[int], allow_single_cluster: bool) -> np.ndarray:
    root = n
    parent_of = {}
    lam_of_point = np.zeros(n)
    for parent, child, lam, size in rows:
        parent_of[child] = parent
        if child < n:
            lam_of_point[child] = lam
    cluster_ids = {c: k for k, c in enumerate(sorted(clusters))}
    root_max_lambda = max((lam for p, _, lam, _ in rows if p == root), default=0.0)
    labels = np.full(n, -1, dtype=np.intp)
    for point in range(n):
        node = parent_of.get(point, root)
        while node not in clusters and node != root:
            node = parent_of[node]
        if node != root:
            labels[point] = cluster_ids[node]
        elif root in clusters and len(clusters) == 1 and allow_single_cluster:
            if lam_of_point[point] >= root_max_lambda:
                labels[point] = cluster_ids[root]
    return labels


def hdbscan_labels(
    dist: np.ndarray,
    min_cluster_size: int = 20,
    single_cluster: bool = False,
    min_samples: int | None = None,
) -> np.ndarray:
    """Cluster labels (-1 = noise) for a symmetric precomputed distance matrix."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.ndim != 2 or dist.shape[1] != n or n == 0:
        raise ValueError("distance matrix must be square and nonempty")
    if not np.allclose(dist, dist.T):
        raise ValueError("distance matrix must be symmetric")
    if n == 1 or not np.any(dist > 0):
        warnings.warn("all pairwise distances are zero; returning one cluster", DegenerateInputWarning)
        return np.zeros(n, dtype=np.intp)
    min_samples = min_cluster_size if min_samples is None else min_samples
    mreach = mutual_reachability(dist, min_samples)
    hierarchy = single_linkage(prim_mst(mreach), n)
    rows = condense_tree(hierarchy, min_cluster_size)
    clusters = select_clusters(rows, n, single_cluster)
    return label_points(rows, n, clusters, single_cluster)
