"""Hyperedge construction over latent space and the Zhou normalized Laplacian."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from .neighbors import knn

log = logging.getLogger(__name__)

MODES = ("knn_only", "manifold_hypergraph")


class HypergraphError(ValueError):
    pass


@dataclass
class Hypergraph:
    n_vertices: int
    hyperedges: list[tuple[int, ...]]
    weights: np.ndarray
    mode: str = "knn_only"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.hyperedges):
            raise HypergraphError("one weight per hyperedge required")
        for e in self.hyperedges:
            if len(set(e)) < 2:
                raise HypergraphError(f"hyperedge {e} has fewer than 2 vertices")
            if min(e) < 0 or max(e) >= self.n_vertices:
                raise HypergraphError(f"hyperedge {e} indexes outside [0, {self.n_vertices})")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise HypergraphError("hyperedge weights must be positive and finite")

    def incidence(self) -> sp.csr_matrix:
        rows = np.concatenate([np.asarray(e, dtype=np.int64) for e in self.hyperedges])
        cols = np.repeat(np.arange(len(self.hyperedges)), [len(e) for e in self.hyperedges])
        H = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices, len(self.hyperedges)))
        H.data[:] = 1.0  # a vertex listed twice in one edge still counts once
        return H

    def vertex_degrees(self):
        return self.incidence() @ self.weights

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for e, w in zip(self.hyperedges, self.weights):
                fh.write(json.dumps({"vertices": sorted(int(v) for v in e), "weight": float(w)}) + "\n")

    @classmethod
    def load_jsonl(cls, path, n_vertices, mode="knn_only"):
        edges, weights = [], []
        for line in Path(path).read_text().splitlines():
            obj = json.loads(line)
            edges.append(tuple(obj["vertices"]))
            weights.append(obj["weight"])
        return cls(n_vertices, edges, np.array(weights), mode)


def _merge(n, edges, weights, mode):
    merged: dict[tuple[int, ...], float] = {}
    for e, w in zip(edges, weights):
        key = tuple(sorted(set(int(v) for v in e)))
        merged[key] = merged.get(key, 0.0) + float(w)
    return Hypergraph(n, list(merged), np.fromiter(merged.values(), dtype=np.float64, count=len(merged)), mode)


def _shard_rows(n, shards):
    if shards is None:
        return [np.arange(n)]
    out = []
    for s in shards:
        rows = getattr(s, "row_indices", s)
        out.append(np.sort(np.asarray(rows, dtype=np.int64)))
    return out


def knn_hyperedges(Z, k: int = 12, shards=None) -> Hypergraph:
    """One hyperedge per sample: the sample plus its k nearest latent neighbours.

    With ``shards`` the neighbours are searched inside each shard only and the
    resulting edges are unioned; identical vertex sets merge and add weights.
    """
    Z = np.asarray(Z, dtype=np.float64)
    edges, weights = [], []
    for rows in _shard_rows(len(Z), shards):
        if len(rows) < k + 1:
            raise HypergraphError(f"shard of {len(rows)} rows is smaller than k+1={k + 1}")
        idx, _ = knn(Z[rows], k)
        for i in range(len(rows)):
            edges.append((rows[i], *rows[idx[i]]))
            weights.append(1.0)
    return _merge(len(Z), edges, weights, "knn_only")


def diffusion_operator(Zs, k: int, t: int):
    """t-step Markov diffusion over a self-tuning kNN heat-kernel affinity."""
    m = len(Zs)
    idx, dist = knn(Zs, k)
    sigma = np.maximum(dist[:, math.ceil(k / 2) - 1], 1e-12)
    rows = np.repeat(np.arange(m), k)
    cols = idx.ravel()
    vals = np.exp(-dist.ravel() ** 2 / (sigma[rows] * sigma[cols]))
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    A = A.maximum(A.T).tocsr()
    deg = np.asarray(A.sum(axis=1)).ravel()
    isolated = np.flatnonzero(deg <= 0)
    if len(isolated):
        log.warning("%d isolated vertices in diffusion graph; linking each to its nearest neighbour", len(isolated))
        A = A.tolil()
        for i in isolated:
            A[i, idx[i, 0]] = A[idx[i, 0], i] = 1.0
        A = A.tocsr()
        deg = np.asarray(A.sum(axis=1)).ravel()
    P = sp.diags(1.0 / deg) @ A
    P = P.tocsr()
    Pt = P
    for _ in range(t - 1):
        Pt = (Pt @ P).tocsr()
    return A, P, Pt


def _row(M, i):
    lo, hi = M.indptr[i], M.indptr[i + 1]
    cols, vals = M.indices[lo:hi], M.data[lo:hi]
    keep = (cols != i) & (vals > 0)
    return cols[keep], vals[keep]


def manifold_hyperedges(Z, k: int = 12, t: int = 3, shards=None) -> Hypergraph:
    """Hyperedges from the k strongest t-step diffusion affinities of each sample."""
    if t < 1:
        raise HypergraphError("t must be at least 1")
    Z = np.asarray(Z, dtype=np.float64)
    edges, weights = [], []
    for rows in _shard_rows(len(Z), shards):
        if len(rows) < k + 1:
            raise HypergraphError(f"shard of {len(rows)} rows is smaller than k+1={k + 1}")
        _, P, Pt = diffusion_operator(Z[rows], k, t)
        short = 0
        for i in range(len(rows)):
            cols, vals = _row(Pt, i)
            top = np.lexsort((cols, -vals))[:k]
            cols, vals = cols[top], vals[top]
            if len(cols) < k:
                # periodic walks (e.g. an isolated pair with even t) can return all mass to i;
                # pad from the one-step operator so the edge keeps k+1 vertices
                short += 1
                pc, pv = _row(P, i)
                extra = ~np.isin(pc, cols)
                pc, pv = pc[extra], pv[extra]
                pad = np.lexsort((pc, -pv))[:k - len(cols)]
                cols = np.concatenate([cols, pc[pad]])
                if len(vals) == 0:  # weight from the padding only when P^t offers nothing
                    vals = pv[pad]
            edges.append((rows[i], *rows[cols]))
            weights.append(float(vals.mean()))
        if short:
            log.warning("%d vertices had fewer than k diffusion neighbours after %d steps; padded from one step",
                        short, t)
    return _merge(len(Z), edges, weights, "manifold_hypergraph")


def laplacian(h: Hypergraph):
    """Return ``(L, dv)`` with ``L = I - Dv^-1/2 H W De^-1 H^T Dv^-1/2``."""
    H = h.incidence()
    dv = H @ h.weights
    if np.any(dv <= 0):
        raise HypergraphError(f"{int(np.sum(dv <= 0))} vertices have zero degree")
    de = np.asarray(H.sum(axis=0)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(dv))
    theta = inv_sqrt @ H @ sp.diags(h.weights / de) @ H.T @ inv_sqrt
    L = sp.identity(h.n_vertices, format="csr") - theta
    L = ((L + L.T) * 0.5).tocsr()
    return L, dv


def connected_components(h: Hypergraph) -> int:
    H = h.incidence()
    A = (H @ H.T).tocsr()
    return _cc(A, directed=False)[0]
