"""Micro-segmentation of the spectral embedding and structural outlierness."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hdbscan as _hdb
from .neighbors import pairwise_sq


@dataclass
class Segmentation:
    labels: np.ndarray
    clusterer: str
    outlierness: np.ndarray | None = None
    centroids: np.ndarray | None = None
    tree: _hdb.CondensedTree | None = None
    inertia_history: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def n_clusters(self):
        return int(len(np.unique(self.labels[self.labels >= 0])))

    @property
    def sizes(self):
        ids, counts = np.unique(self.labels[self.labels >= 0], return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))

    @property
    def noise_fraction(self):
        return float(np.mean(self.labels < 0))

    def summary(self):
        sizes = np.array(list(self.sizes.values()))
        q = {"min": int(sizes.min()), "median": float(np.median(sizes)), "max": int(sizes.max())} if len(sizes) else {}
        return {
            "clusterer": self.clusterer,
            "n_clusters": self.n_clusters,
            "size_quantiles": q,
            "noise_fraction": self.noise_fraction,
            "params": self.params,
        }

    def save(self, directory, stem="segmentation"):
        directory = Path(directory)
        out = self.outlierness if self.outlierness is not None else np.full(len(self.labels), np.nan)
        lines = ["row_id,cluster_id,outlierness"]
        lines += [f"{i},{int(c)},{float(o)!r}" for i, (c, o) in enumerate(zip(self.labels, out))]
        (directory / f"{stem}.csv").write_text("\n".join(lines) + "\n")
        (directory / f"{stem}.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory, stem="segmentation"):
        directory = Path(directory)
        data = np.loadtxt(directory / f"{stem}.csv", delimiter=",", skiprows=1, ndmin=2)
        summ = json.loads((directory / f"{stem}.json").read_text())
        return cls(labels=data[:, 1].astype(np.int64), clusterer=summ["clusterer"],
                   outlierness=data[:, 2], params=summ["params"])


def _assign(X, C):
    D = pairwise_sq(X, C)
    lab = np.argmin(D, axis=1)  # first index wins ties
    return lab, D[np.arange(len(X)), lab]


def _kmeans_pp(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = pairwise_sq(X, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            j = rng.integers(len(X))
        else:
            j = rng.choice(len(X), p=d2 / total)
        centers.append(X[j])
        d2 = np.minimum(d2, pairwise_sq(X, X[j][None])[:, 0])
    return np.array(centers)


def _reseed_empty(X, C, lab, d2, counts):
    filled = np.bincount(lab, minlength=len(C))
    empty = np.flatnonzero(filled == 0)
    if len(empty):
        far = np.argsort(-d2, kind="stable")[:len(empty)]
        C[empty] = X[far]
        counts[empty] = 1.0
    return len(empty)


def minibatch_kmeans(X, k_clusters: int = 500, batch: int = 1024, seed: int = 0,
                     max_epochs: int = 100, tol: float = 1e-4) -> Segmentation:
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if k_clusters > n:
        raise ValueError(f"k_clusters={k_clusters} exceeds n={n}")
    rng = np.random.default_rng(seed)
    sample = rng.choice(n, size=min(n, max(3 * batch, 3 * k_clusters)), replace=False)
    C = _kmeans_pp(X[np.sort(sample)], k_clusters, rng)
    counts = np.zeros(k_clusters)
    lab, d2 = _assign(X, C)
    history = [float(d2.sum())]
    for _ in range(max_epochs):
        start = C.copy()
        order = rng.permutation(n)
        for s in range(0, n, batch):
            B = X[order[s:s + batch]]
            bl, _ = _assign(B, C)
            m = np.bincount(bl, minlength=k_clusters).astype(float)
            sums = np.zeros_like(C)
            np.add.at(sums, bl, B)
            hit = m > 0
            counts[hit] += m[hit]
            C[hit] += (sums[hit] - m[hit, None] * C[hit]) / counts[hit, None]
        lab, d2 = _assign(X, C)
        reseeded = _reseed_empty(X, C, lab, d2, counts)
        if reseeded:
            lab, d2 = _assign(X, C)
        history.append(float(d2.sum()))
        if not reseeded and np.max(np.linalg.norm(C - start, axis=1)) < tol:
            break
    # compact ids in case duplicates left a centre without members
    used = np.unique(lab)
    remap = np.full(k_clusters, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Segmentation(labels=remap[lab], clusterer="minibatch_kmeans", centroids=C[used],
                        inertia_history=history,
                        params={"k_clusters": k_clusters, "batch": batch, "seed": seed})


def hdbscan(X, min_cluster_size="auto", min_samples=None) -> Segmentation:
    res = _hdb.hdbscan_fit(X, min_cluster_size, min_samples)
    return Segmentation(labels=res.labels, clusterer="hdbscan", tree=res.tree,
                        params={"min_cluster_size": res.min_cluster_size, "min_samples": res.min_samples})


def cluster_centroids(X, labels):
    ids = np.unique(labels[labels >= 0])
    return ids, np.array([X[labels == c].mean(axis=0) for c in ids])


def kmeans_outlierness(X, seg: Segmentation) -> np.ndarray:
    """Euclidean distance of each row to the mean of its cluster."""
    X = np.asarray(X, dtype=np.float64)
    ids, cents = cluster_centroids(X, seg.labels)
    pos = np.searchsorted(ids, seg.labels)
    return np.linalg.norm(X - cents[pos], axis=1)


def hdbscan_outlierness(X, seg: Segmentation, tree=None) -> np.ndarray:
    tree = tree if tree is not None else seg.tree
    scores = np.zeros(len(seg.labels)) if tree is None else _hdb.glosh_scores(tree)
    scores = np.clip(scores, 0.0, 1.0)
    scores[seg.labels < 0] = 1.0
    return scores


def segment(X, clusterer: str, k_clusters=500, batch=1024, min_cluster_size="auto",
            min_samples=None, seed=0) -> Segmentation:
    """Cluster and attach the matching outlierness vector."""
    if clusterer == "minibatch_kmeans":
        seg = minibatch_kmeans(X, k_clusters, batch, seed)
        seg.outlierness = kmeans_outlierness(X, seg)
    elif clusterer == "hdbscan":
        seg = hdbscan(X, min_cluster_size, min_samples)
        seg.outlierness = hdbscan_outlierness(X, seg)
    else:
        raise ValueError(f"unknown clusterer {clusterer!r}")
    return seg
