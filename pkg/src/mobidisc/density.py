"""Exact HDBSCAN clustering.

The implementation follows the classic construction: mutual-reachability
distances, a minimum spanning tree, a single-linkage dendrogram, a condensed
tree at ``min_cluster_size``, and excess-of-mass cluster selection modified
by ``cluster_selection_epsilon``. No approximations are used anywhere, so
results are reproducible bit-for-bit and can be checked against a
brute-force reconstruction of the same hierarchy.

Conventions (shared with any checker):

- ``core_k(p)`` is the distance from ``p`` to its k-th nearest *other*
  point, with ``k = min(min_samples, n - 1)``.
- ``mreach(a, b) = max(core(a), core(b), d(a, b))``.
- Euclidean distances are evaluated as ``sqrt(sum((a - b)**2))`` in float64
  so that independently computed values are bit-identical.
- The dendrogram is the one produced by processing the complete
  mutual-reachability graph's edges in ascending weight order and merging
  components as in Kruskal's algorithm. Ties in weight are ordered by the
  endpoint coordinates (lexicographically, smaller endpoint first), which
  keeps the hierarchy invariant to the order points arrive in.
- ``lambda = 1 / max(distance, 1e-12)``.
- A cluster born below ``cluster_selection_epsilon`` is replaced by its
  first ancestor born at ``>= cluster_selection_epsilon`` (never the root).
- Output labels are canonical: clusters are numbered by their smallest
  member point index; noise is -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

_ZERO_DISTANCE_FLOOR = 1e-12


@dataclass
class _Dendrogram:
    # merge i creates node n + i joining children[i] at height heights[i]
    children: np.ndarray  # (n-1, 2) node ids
    heights: np.ndarray  # (n-1,)
    sizes: np.ndarray  # (n-1,) leaf count of the merged node


def hdbscan(
    points: np.ndarray,
    min_cluster_size: int,
    min_samples: int,
    cluster_selection_epsilon: float = 0.0,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Cluster points with HDBSCAN.

    Returns ``(labels, clusters)`` where ``labels[i]`` is the cluster id of
    point ``i`` (or -1 for noise) and ``clusters[c]`` is the sorted index
    array of cluster ``c``'s members.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        pts = pts.reshape(len(pts), -1)
    n = pts.shape[0]
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be at least 2")
    if min_samples < 1:
        raise ValueError("min_samples must be positive")
    if cluster_selection_epsilon < 0:
        raise ValueError("cluster_selection_epsilon must be non-negative")
    if n == 0:
        return np.empty(0, dtype=np.int64), []
    if n < min_cluster_size:
        return np.full(n, -1, dtype=np.int64), []

    core = _core_distances(pts, min_samples)
    tree = cKDTree(pts)
    mst_u, mst_v, mst_w = _mst_prim(pts, core)
    dendro = _build_dendrogram(pts, core, tree, mst_u, mst_v, mst_w)
    parent, child, lam, size = _condense(dendro, n, min_cluster_size)
    selected = _select_clusters(parent, child, lam, size, n, cluster_selection_epsilon)
    return _labels(parent, child, size, n, selected)


def _core_distances(pts: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the min_samples-th nearest other point (clamped to n-1).

    The k-d tree only supplies neighbor indices; the returned distances are
    recomputed with the shared float expression (see module docstring).
    """
    n = pts.shape[0]
    k = min(min_samples, n - 1)
    if k < 1:
        return np.zeros(n)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    kth = idx[:, k]
    return np.sqrt(np.sum((pts - pts[kth]) ** 2, axis=1))


def _mst_prim(pts: np.ndarray, core: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact MST of the implicit mutual-reachability graph (dense Prim).

    Distances are evaluated column-wise as ``sqrt((dx*dx + dy*dy) + dz*dz)``,
    the same summation order as the shared pairwise expression.
    """
    n, dim = pts.shape
    cols = [np.ascontiguousarray(pts[:, j]) for j in range(dim)]
    in_tree = np.zeros(n, dtype=bool)
    dist = np.full(n, np.inf)
    edge_from = np.zeros(n, dtype=np.int64)
    us = np.empty(n - 1, dtype=np.int64)
    vs = np.empty(n - 1, dtype=np.int64)
    ws = np.empty(n - 1)

    current = 0
    in_tree[0] = True
    d2 = np.empty(n)
    for step in range(n - 1):
        np.multiply(cols[0] - cols[0][current], cols[0] - cols[0][current], out=d2)
        for j in range(1, dim):
            diff = cols[j] - cols[j][current]
            d2 += diff * diff
        cand = np.maximum(np.maximum(core, core[current]), np.sqrt(d2))
        better = ~in_tree & (cand < dist)
        dist[better] = cand[better]
        edge_from[better] = current
        masked = np.where(in_tree, np.inf, dist)
        nxt = int(np.argmin(masked))
        us[step] = edge_from[nxt]
        vs[step] = nxt
        ws[step] = dist[nxt]
        in_tree[nxt] = True
        current = nxt
    return us, vs, ws


class _UnionFind:
    """Union-find over points; each component carries its dendrogram node id."""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.node = np.arange(n, dtype=np.int64)

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return int(root)

    def union(self, a_root: int, b_root: int, node_id: int) -> None:
        self.parent[b_root] = a_root
        self.node[a_root] = node_id


def _build_dendrogram(
    pts: np.ndarray,
    core: np.ndarray,
    tree: cKDTree,
    mst_u: np.ndarray,
    mst_v: np.ndarray,
    mst_w: np.ndarray,
) -> _Dendrogram:
    """Canonical single-linkage dendrogram from the MST edge multiset.

    Merge heights and the partition at every level are determined by the
    MST alone. Within a level of exactly-equal weights the canonical merge
    order additionally needs all graph edges of that weight, which are
    enumerated from the points whose core distance equals the level weight
    (the only way distinct pairs share an exact weight, barring coincident
    pair distances).
    """
    n = pts.shape[0]
    order = np.argsort(mst_w, kind="stable")
    uf = _UnionFind(n)
    children = np.empty((n - 1, 2), dtype=np.int64)
    heights = np.empty(n - 1)
    sizes = np.empty(n - 1, dtype=np.int64)
    leaf_count = np.ones(2 * n - 1, dtype=np.int64)

    core_order = np.argsort(core, kind="stable")
    core_sorted = core[core_order]

    merges_done = 0

    def do_merge(a_pt: int, b_pt: int, w: float) -> None:
        nonlocal merges_done
        ra = uf.find(a_pt)
        rb = uf.find(b_pt)
        na, nb = int(uf.node[ra]), int(uf.node[rb])
        node_id = n + merges_done
        children[merges_done] = (min(na, nb), max(na, nb))
        heights[merges_done] = w
        leaf_count[node_id] = leaf_count[na] + leaf_count[nb]
        sizes[merges_done] = leaf_count[node_id]
        uf.union(ra, rb, node_id)
        merges_done += 1

    i = 0
    while i < n - 1:
        j = i
        w = mst_w[order[i]]
        while j < n - 1 and mst_w[order[j]] == w:
            j += 1
        level = order[i:j]
        if level.size == 1:
            e = level[0]
            do_merge(int(mst_u[e]), int(mst_v[e]), w)
        else:
            before = merges_done
            for a, b in _level_candidates(pts, core, tree, core_order, core_sorted, mst_u[level], mst_v[level], w):
                ra, rb = uf.find(a), uf.find(b)
                if ra != rb:
                    do_merge(a, b, w)
            if merges_done - before != level.size:
                raise RuntimeError(
                    "tied-weight level could not be canonicalized; "
                    "input has coincident pair distances"
                )
        i = j

    return _Dendrogram(children=children, heights=heights, sizes=sizes)


def edge_sort_key(pts: np.ndarray, i: int, j: int) -> tuple:
    """Permutation-invariant ordering key for a tied-weight edge."""
    a = tuple(float(v) for v in pts[i])
    b = tuple(float(v) for v in pts[j])
    return (min(a, b), max(a, b))


def _level_candidates(
    pts: np.ndarray,
    core: np.ndarray,
    tree: cKDTree,
    core_order: np.ndarray,
    core_sorted: np.ndarray,
    level_u: np.ndarray,
    level_v: np.ndarray,
    w: float,
) -> list[tuple[int, int]]:
    """All graph edges of weight exactly ``w`` in canonical (coordinate) order."""
    cand: set[tuple[int, int]] = set()
    for a, b in zip(level_u, level_v):
        a, b = int(a), int(b)
        cand.add((min(a, b), max(a, b)))
    lo = int(np.searchsorted(core_sorted, w, side="left"))
    hi = int(np.searchsorted(core_sorted, w, side="right"))
    for i in core_order[lo:hi]:
        i = int(i)
        near = tree.query_ball_point(pts[i], r=w * (1.0 + 1e-9))
        for j in near:
            j = int(j)
            if j == i or core[j] > w:
                continue
            d = float(np.sqrt(np.sum((pts[i] - pts[j]) ** 2)))
            if d <= w:
                cand.add((min(i, j), max(i, j)))
    return sorted(cand, key=lambda e: (edge_sort_key(pts, *e), e))


def _condense(
    dendro: _Dendrogram, n: int, min_cluster_size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Condensed tree rows (parent, child, lambda, child_size).

    Cluster ids start at ``n`` (the root). A split where both sides reach
    ``min_cluster_size`` creates two new clusters; otherwise the cluster
    keeps its id through the larger side while the points of the smaller
    side fall out individually at the split's lambda.
    """
    children = dendro.children
    heights = dendro.heights
    root = n + (n - 1) - 1

    def node_size(node: int) -> int:
        return 1 if node < n else int(dendro.sizes[node - n])

    def leaves_under(node: int) -> list[int]:
        out = []
        stack = [node]
        while stack:
            cur = stack.pop()
            if cur < n:
                out.append(cur)
            else:
                stack.extend(children[cur - n])
        return out

    relabel = {root: n}
    next_label = n + 1
    rows_parent: list[int] = []
    rows_child: list[int] = []
    rows_lam: list[float] = []
    rows_size: list[int] = []

    stack = [root]
    while stack:
        node = stack.pop()
        if node < n:
            continue
        cluster = relabel[node]
        left, right = (int(c) for c in children[node - n])
        lam = 1.0 / max(heights[node - n], _ZERO_DISTANCE_FLOOR)
        left_size, right_size = node_size(left), node_size(right)

        big_left = left_size >= min_cluster_size
        big_right = right_size >= min_cluster_size
        if big_left and big_right:
            for side, size in ((left, left_size), (right, right_size)):
                relabel[side] = next_label
                rows_parent.append(cluster)
                rows_child.append(next_label)
                rows_lam.append(lam)
                rows_size.append(size)
                next_label += 1
                stack.append(side)
        elif big_left or big_right:
            keep, drop = (left, right) if big_left else (right, left)
            relabel[keep] = cluster
            stack.append(keep)
            for leaf in leaves_under(drop):
                rows_parent.append(cluster)
                rows_child.append(leaf)
                rows_lam.append(lam)
                rows_size.append(1)
        else:
            for side in (left, right):
                for leaf in leaves_under(side):
                    rows_parent.append(cluster)
                    rows_child.append(leaf)
                    rows_lam.append(lam)
                    rows_size.append(1)

    return (
        np.asarray(rows_parent, dtype=np.int64),
        np.asarray(rows_child, dtype=np.int64),
        np.asarray(rows_lam),
        np.asarray(rows_size, dtype=np.int64),
    )


def _select_clusters(
    parent: np.ndarray,
    child: np.ndarray,
    lam: np.ndarray,
    size: np.ndarray,
    n: int,
    cluster_selection_epsilon: float,
) -> set[int]:
    """Excess-of-mass selection with the epsilon merge-up rule. Root excluded."""
    if parent.size == 0:
        return set()
    order = np.lexsort((child, parent))
    parent, child, lam, size = parent[order], child[order], lam[order], size[order]

    root = n
    cluster_ids = sorted(set(parent.tolist()) | {int(c) for c, s in zip(child, size) if s > 1})
    birth_lambda = {root: 0.0}
    cluster_children: dict[int, list[int]] = {c: [] for c in cluster_ids}
    cluster_parent: dict[int, int] = {}
    for p, c, lv, s in zip(parent, child, lam, size):
        if s > 1:
            birth_lambda[int(c)] = float(lv)
            cluster_children[int(p)].append(int(c))
            cluster_parent[int(c)] = int(p)

    stability = {c: 0.0 for c in cluster_ids}
    for p, c, lv, s in zip(parent, child, lam, size):
        stability[int(p)] += (float(lv) - birth_lambda[int(p)]) * int(s)

    is_cluster = {c: True for c in cluster_ids if c != root}
    # children carry larger ids than their parent, so descending id order
    # visits children first
    for node in sorted(is_cluster, reverse=True):
        child_total = sum(stability[c] for c in cluster_children[node])
        if child_total > stability[node]:
            is_cluster[node] = False
            stability[node] = child_total
        else:
            stack = list(cluster_children[node])
            while stack:
                sub = stack.pop()
                is_cluster[sub] = False
                stack.extend(cluster_children[sub])

    eom = sorted(c for c, flag in is_cluster.items() if flag)
    if cluster_selection_epsilon <= 0.0 or not eom:
        return set(eom)

    def birth_eps(c: int) -> float:
        return 1.0 / birth_lambda[c]

    def climb(c: int) -> int:
        while True:
            p = cluster_parent[c]
            if p == root:
                return c
            if birth_eps(p) >= cluster_selection_epsilon:
                return p
            c = p

    selected: list[int] = []
    processed: set[int] = set()
    for c in eom:
        if birth_eps(c) >= cluster_selection_epsilon:
            selected.append(c)
            continue
        if c in processed:
            continue
        top = climb(c)
        selected.append(top)
        stack = list(cluster_children[top])
        while stack:
            sub = stack.pop()
            processed.add(sub)
            stack.extend(cluster_children[sub])
    return set(selected)


def _labels(
    parent: np.ndarray,
    child: np.ndarray,
    size: np.ndarray,
    n: int,
    selected: set[int],
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Assign each point to its nearest selected ancestor, or noise."""
    labels = np.full(n, -1, dtype=np.int64)
    if not selected:
        return labels, []

    point_parent: dict[int, int] = {}
    cluster_parent: dict[int, int] = {}
    for p, c, s in zip(parent, child, size):
        if s == 1:
            point_parent[int(c)] = int(p)
        else:
            cluster_parent[int(c)] = int(p)

    resolve_cache: dict[int, int] = {}

    def resolve(cluster: int) -> int:
        # nearest selected ancestor (including self); -1 when none
        chain = []
        cur = cluster
        while True:
            if cur in resolve_cache:
                result = resolve_cache[cur]
                break
            if cur in selected:
                result = cur
                break
            if cur not in cluster_parent:
                result = -1
                break
            chain.append(cur)
            cur = cluster_parent[cur]
        resolve_cache[cur] = result
        for node in chain:
            resolve_cache[node] = result
        return result

    owner = np.full(n, -1, dtype=np.int64)
    for pt in range(n):
        if pt in point_parent:
            owner[pt] = resolve(point_parent[pt])

    cluster_order: list[int] = []
    seen_clusters: dict[int, int] = {}
    for pt in range(n):
        c = int(owner[pt])
        if c >= 0 and c not in seen_clusters:
            seen_clusters[c] = len(cluster_order)
            cluster_order.append(c)
    for pt in range(n):
        c = int(owner[pt])
        if c >= 0:
            labels[pt] = seen_clusters[c]
    clusters = [np.nonzero(labels == k)[0] for k in range(len(cluster_order))]
    return labels, clusters
