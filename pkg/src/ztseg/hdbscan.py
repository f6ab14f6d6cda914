"""HDBSCAN* with excess-of-mass cluster extraction and GLOSH outlier scores.

Exact O(n^2)-time / O(n)-memory Prim MST over mutual reachability distances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neighbors import knn, pairwise_sq


@dataclass
class CondensedTree:
    parent: np.ndarray
    child: np.ndarray
    lambda_val: np.ndarray
    child_size: np.ndarray
    n_points: int

    @property
    def root(self):
        return self.n_points

    def cluster_rows(self):
        return self.child_size > 1


def auto_min_cluster_size(n: int) -> int:
    return max(10, int(0.0001 * n))


def core_distances(X, min_samples: int) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest point, the point itself counted first."""
    if min_samples <= 1:
        return np.zeros(len(X))
    _, dist = knn(X, min_samples - 1)
    return dist[:, -1]


def mutual_reachability_mst(X, core):
    """Prim's algorithm; returns ``(u, v, w)`` edge arrays in insertion order."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    src = np.full(n, -1, dtype=np.int64)
    u = np.empty(n - 1, dtype=np.int64)
    v = np.empty(n - 1, dtype=np.int64)
    w = np.empty(n - 1)
    current = 0
    in_tree[0] = True
    for step in range(n - 1):
        d = np.sqrt(pairwise_sq(X[current:current + 1], X)[0])
        mr = np.maximum(np.maximum(d, core[current]), core)
        upd = ~in_tree & (mr < best)
        best[upd] = mr[upd]
        src[upd] = current
        cand = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(cand))
        u[step], v[step], w[step] = src[nxt], nxt, best[nxt]
        in_tree[nxt] = True
        current = nxt
    return u, v, w


def single_linkage(u, v, w, n):
    """scipy-style linkage rows ``(left, right, distance, size)`` from MST edges."""
    order = np.argsort(w, kind="stable")
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    out = np.empty((n - 1, 4))
    for i, e in enumerate(order):
        a, b = find(u[e]), find(v[e])
        new = n + i
        parent[a] = parent[b] = new
        size[new] = size[a] + size[b]
        out[i] = (a, b, w[e], size[new])
    return out


def _subtree_leaves(slt, node, n):
    stack, leaves = [node], []
    while stack:
        x = stack.pop()
        if x < n:
            leaves.append(x)
        else:
            row = slt[x - n]
            stack.append(int(row[1]))
            stack.append(int(row[0]))
    return leaves


def condense_tree(slt, min_cluster_size: int) -> CondensedTree:
    n = len(slt) + 1
    root = 2 * n - 2
    relabel = np.zeros(2 * n - 1, dtype=np.int64)
    relabel[root] = n
    next_label = n + 1

    def size(x):
        return 1 if x < n else int(slt[x - n, 3])

    parent, child, lam, csize = [], [], [], []
    queue = [root]
    head = 0
    while head < len(queue):
        node = queue[head]
        head += 1
        left, right, dist = int(slt[node - n, 0]), int(slt[node - n, 1]), slt[node - n, 2]
        lam_here = 1.0 / dist
        lsz, rsz = size(left), size(right)
        big = [(c, s) for c, s in ((left, lsz), (right, rsz)) if s >= min_cluster_size]
        small = [c for c, s in ((left, lsz), (right, rsz)) if s < min_cluster_size]
        for c in small:
            for leaf in _subtree_leaves(slt, c, n):
                parent.append(relabel[node]); child.append(leaf); lam.append(lam_here); csize.append(1)
        if len(big) == 2:
            for c, s in big:
                relabel[c] = next_label
                next_label += 1
                parent.append(relabel[node]); child.append(relabel[c]); lam.append(lam_here); csize.append(s)
                if c >= n:
                    queue.append(c)
        elif len(big) == 1:
            c, s = big[0]
            relabel[c] = relabel[node]
            queue.append(c)
    return CondensedTree(np.array(parent, dtype=np.int64), np.array(child, dtype=np.int64),
                         np.array(lam), np.array(csize, dtype=np.int64), n)


def stabilities(tree: CondensedTree) -> dict[int, float]:
    birth = {tree.root: 0.0}
    for c, l, s in zip(tree.child, tree.lambda_val, tree.child_size):
        if s > 1:
            birth[int(c)] = float(l)
    stab = {c: 0.0 for c in birth}
    for p, l, s in zip(tree.parent, tree.lambda_val, tree.child_size):
        stab[int(p)] += (float(l) - birth[int(p)]) * int(s)
    return stab


def select_clusters_eom(tree: CondensedTree, allow_single_cluster=False) -> list[int]:
    stab = stabilities(tree)
    mask = tree.cluster_rows()
    children: dict[int, list[int]] = {}
    for p, c in zip(tree.parent[mask], tree.child[mask]):
        children.setdefault(int(p), []).append(int(c))
    nodes = sorted(stab, reverse=True)
    if not allow_single_cluster:
        nodes = [c for c in nodes if c != tree.root]
    selected = {c: True for c in nodes}

    def descendants(c):
        stack, out = list(children.get(c, [])), []
        while stack:
            x = stack.pop()
            out.append(x)
            stack.extend(children.get(x, []))
        return out

    for node in nodes:
        sub = sum(stab[c] for c in children.get(node, []))
        if sub > stab[node]:
            selected[node] = False
            stab[node] = sub
        else:
            for d in descendants(node):
                selected[d] = False
    return sorted(c for c, keep in selected.items() if keep)


def label_points(tree: CondensedTree, selected) -> np.ndarray:
    label_of = {c: i for i, c in enumerate(sorted(selected))}
    owner = {tree.root: label_of.get(tree.root, -1)}
    mask = tree.cluster_rows()
    for p, c in sorted(zip(tree.parent[mask], tree.child[mask]), key=lambda pc: pc[1]):
        owner[int(c)] = label_of[int(c)] if int(c) in label_of else owner[int(p)]
    labels = np.full(tree.n_points, -1, dtype=np.int64)
    pts = ~mask
    for p, c in zip(tree.parent[pts], tree.child[pts]):
        labels[c] = owner[int(p)]
    return labels


def glosh_scores(tree: CondensedTree) -> np.ndarray:
    """``1 - lambda_point / lambda_max`` where ``lambda_max`` is the latest death in the point's cluster subtree."""
    deaths: dict[int, float] = {}
    pts = ~tree.cluster_rows()
    for p, l in zip(tree.parent[pts], tree.lambda_val[pts]):
        deaths[int(p)] = max(deaths.get(int(p), 0.0), float(l))
    mask = tree.cluster_rows()
    for p, c in sorted(zip(tree.parent[mask], tree.child[mask]), key=lambda pc: -pc[1]):
        deaths[int(p)] = max(deaths.get(int(p), 0.0), deaths.get(int(c), 0.0))
    scores = np.zeros(tree.n_points)
    for p, c, l in zip(tree.parent[pts], tree.child[pts], tree.lambda_val[pts]):
        lmax = deaths[int(p)]
        scores[c] = 0.0 if lmax <= 0 else (lmax - l) / lmax
    return scores


@dataclass
class HDBSCANResult:
    labels: np.ndarray
    tree: CondensedTree | None
    mst: tuple[np.ndarray, np.ndarray, np.ndarray]
    core: np.ndarray
    min_cluster_size: int
    min_samples: int


def hdbscan_fit(X, min_cluster_size=None, min_samples=None) -> HDBSCANResult:
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    mcs = auto_min_cluster_size(n) if min_cluster_size in (None, "auto") else int(min_cluster_size)
    ms = mcs if min_samples is None else int(min_samples)
    if mcs < 2:
        raise ValueError("min_cluster_size must be at least 2")
    if n < 2 * mcs:
        raise ValueError(f"need at least {2 * mcs} points for min_cluster_size={mcs}, got {n}")
    core = core_distances(X, min(ms, n))
    u, v, w = mutual_reachability_mst(X, core)
    if w.max() == 0.0:
        # every mutual reachability distance is zero: one cluster, no noise
        return HDBSCANResult(np.zeros(n, dtype=np.int64), None, (u, v, w), core, mcs, ms)
    # zero-length merges get a finite birth density so stabilities stay finite
    w_eff = np.maximum(w, w.max() * 1e-12)
    tree = condense_tree(single_linkage(u, v, w_eff, n), mcs)
    labels = label_points(tree, select_clusters_eom(tree))
    return HDBSCANResult(labels, tree, (u, v, w), core, mcs, ms)
