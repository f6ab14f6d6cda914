"""Surrogate classifier, LIME and Shapley attributions, and their projection
onto named flow attributes."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.spatial import cKDTree


# ---------------------------------------------------------------- attribute map

@dataclass
class AttributeMap:
    """Linear map ``Z ≈ X_emb @ W + b`` from spectral to latent coordinates."""
    W: np.ndarray
    b: np.ndarray
    ridge: float
    rmse: float

    def predict(self, X):
        return np.asarray(X) @ self.W + self.b


def fit_attribute_map(X_emb, Z, ridge: float = 1.0) -> AttributeMap:
    X = np.asarray(X_emb, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if len(X) != len(Z):
        raise ValueError(f"row mismatch: {len(X)} spectral rows vs {len(Z)} latent rows")
    if ridge <= 0:
        raise ValueError("ridge penalty must be positive")
    mx, mz = X.mean(axis=0), Z.mean(axis=0)
    Xc, Zc = X - mx, Z - mz
    W = np.linalg.solve(Xc.T @ Xc + ridge * np.eye(X.shape[1]), Xc.T @ Zc)
    b = mz - mx @ W
    rmse = float(np.sqrt(np.mean((X @ W + b - Z) ** 2)))
    return AttributeMap(W, b, float(ridge), rmse)


# ---------------------------------------------------------------- surrogate

class KNNSurrogate:
    """Inverse-distance weighted k-nearest-neighbour vote.

    A query at distance 0 from training points takes its probabilities from
    those exact matches only.
    """

    def __init__(self, X, labels, k: int = 25):
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if k > len(X):
            raise ValueError(f"k={k} exceeds {len(X)} training rows")
        self.classes_ = np.unique(labels)
        if len(self.classes_) < 2:
            raise ValueError("surrogate needs at least two classes")
        self.k = k
        self.X = X
        self.y = np.searchsorted(self.classes_, labels)
        self.scale = X.std(axis=0)
        self._tree = cKDTree(X)

    @property
    def dim(self):
        return self.X.shape[1]

    def predict_proba(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        dist, idx = self._tree.query(Q, k=self.k, workers=-1)
        dist, idx = dist.reshape(len(Q), -1), idx.reshape(len(Q), -1)
        exact = dist == 0.0
        with np.errstate(divide="ignore"):
            w = np.where(exact.any(axis=1, keepdims=True), exact.astype(float), 1.0 / dist)
        P = np.zeros((len(Q), len(self.classes_)))
        rows = np.repeat(np.arange(len(Q)), idx.shape[1])
        np.add.at(P, (rows, self.y[idx].ravel()), w.ravel())
        return P / P.sum(axis=1, keepdims=True)

    def predict(self, Q) -> np.ndarray:
        # argmax takes the first (smallest) class id on ties
        return self.classes_[np.argmax(self.predict_proba(Q), axis=1)]

    def class_prob_fn(self, x):
        """``f(X) = P(class of x | X)`` for the class predicted at ``x``."""
        j = int(np.searchsorted(self.classes_, self.predict(x)[0]))
        return lambda Q: self.predict_proba(Q)[:, j]


def fit_surrogate(X_emb, labels, k: int = 25) -> KNNSurrogate:
    return KNNSurrogate(X_emb, labels, k)


def _as_fn(model, x):
    if isinstance(model, KNNSurrogate):
        return model.class_prob_fn(x)
    return lambda Q: np.asarray(model(np.atleast_2d(Q)), dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------- LIME

def lime_explain(model, x, n_samples: int = 1000, seed: int = 0, scale=None,
                 width: float | None = None) -> np.ndarray:
    """Weighted linear fit of the local class probability around ``x``.

    ``model`` is a fitted :class:`KNNSurrogate` or any callable mapping rows
    to a probability vector.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    d = len(x)
    f = _as_fn(model, x)
    if scale is None:
        scale = model.scale if isinstance(model, KNNSurrogate) else np.ones(d)
    scale = np.where(np.asarray(scale, dtype=np.float64) > 0, scale, 1.0)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_samples, d))
    offsets = eps * scale
    y = f(x + offsets)
    width = 0.75 * np.sqrt(d) if width is None else width
    d2 = np.sum(eps ** 2, axis=1)
    for attempt in range(2):
        w = np.exp(-d2 / width ** 2)
        if w.sum() > 1e-12:
            break
        if attempt == 1:
            raise FloatingPointError("LIME kernel weights vanish even after widening")
        width *= 2.0
    A = np.column_stack([np.ones(n_samples), offsets])
    sw = np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(A * sw, y * sw[:, 0], rcond=None)
    return coef[1:]


# ---------------------------------------------------------------- SHAP

def coalition_values(f, x, background, masks) -> np.ndarray:
    """``v(S) = mean_b f(x_S, b_~S)`` for each boolean mask row."""
    x = np.asarray(x, dtype=np.float64).ravel()
    B = np.asarray(background, dtype=np.float64)
    if B.ndim != 2 or B.shape[1] != len(x) or len(B) == 0:
        raise ValueError(f"background must be a nonempty (m, {len(x)}) matrix")
    out = np.empty(len(masks))
    step = max(1, 65536 // len(B))
    for s in range(0, len(masks), step):
        M = masks[s:s + step]
        rows = np.where(M[:, None, :], x, B[None, :, :]).reshape(-1, len(x))
        out[s:s + step] = f(rows).reshape(len(M), len(B)).mean(axis=1)
    return out


def _all_masks(d):
    codes = np.arange(2 ** d)
    return ((codes[:, None] >> np.arange(d)) & 1).astype(bool)


def shapley_from_values(v, d) -> np.ndarray:
    """Exact Shapley values from a full table ``v[code]`` of coalition values."""
    codes = np.arange(2 ** d)
    sizes = np.array([bin(c).count("1") for c in codes])
    wt = np.array([factorial(s) * factorial(d - s - 1) / factorial(d) if s < d else 0.0 for s in sizes])
    phi = np.zeros(d)
    for i in range(d):
        bit = 1 << i
        without = codes[(codes & bit) == 0]
        phi[i] = np.sum(wt[without] * (v[without | bit] - v[without]))
    return phi


def _kernel_shap(v_fn, d, n_coalitions, rng):
    # sample coalition sizes by total kernel mass, then uniform members
    sizes = np.arange(1, d)
    mass = (d - 1) / (sizes * (d - sizes))
    size_draw = rng.choice(sizes, size=n_coalitions, p=mass / mass.sum())
    masks = np.zeros((n_coalitions, d), dtype=bool)
    for r, s in enumerate(size_draw):
        masks[r, rng.choice(d, size=s, replace=False)] = True
    vals = v_fn(np.vstack([np.zeros((1, d), bool), np.ones((1, d), bool), masks]))
    v0, v1, y = vals[0], vals[1], vals[2:] - vals[0]
    total = v1 - v0
    # eliminate the last coefficient with the efficiency constraint
    Z = masks.astype(float)
    A = Z[:, :-1] - Z[:, [-1]]
    t = y - Z[:, -1] * total
    head, *_ = np.linalg.lstsq(A, t, rcond=None)
    return np.append(head, total - head.sum())


def shap_explain(model, x, background, mode: str = "exact", n_coalitions: int = 2048,
                 seed: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    d = len(x)
    f = _as_fn(model, x)

    def v_fn(masks):
        return coalition_values(f, x, background, masks)

    if mode == "exact":
        if d > 12:
            raise ValueError(f"exact enumeration is limited to d <= 12, got {d}")
        return shapley_from_values(v_fn(_all_masks(d)), d)
    if mode == "sampled":
        return _kernel_shap(v_fn, d, n_coalitions, np.random.default_rng(seed))
    raise ValueError(f"unknown SHAP mode {mode!r}")


def permutation_shapley(v, d) -> np.ndarray:
    """Shapley values by averaging marginal contributions over all ``d!`` orders.

    ``v`` maps a frozenset of feature indices to a coalition value.
    """
    phi = np.zeros(d)
    perms = list(itertools.permutations(range(d)))
    for order in perms:
        seen: set[int] = set()
        for i in order:
            before = v(frozenset(seen))
            seen.add(i)
            phi[i] += v(frozenset(seen)) - before
    return phi / len(perms)


# ---------------------------------------------------------------- naming

@dataclass
class Explanation:
    did: int
    method: str
    emb_importances: np.ndarray
    latent_importances: np.ndarray
    top_original_attributes: list[tuple[str, float]] = field(default_factory=list)

    @property
    def names(self):
        return [n for n, _ in self.top_original_attributes]

    def to_dict(self):
        return {
            "DID": self.did,
            "method": self.method,
            "emb_importances": self.emb_importances.tolist(),
            "latent_importances": self.latent_importances.tolist(),
            "top_original_attributes": [[n, s] for n, s in self.top_original_attributes],
        }


def latent_feature_correlation(Z, F) -> np.ndarray:
    """Pearson correlation between latent columns and feature columns; constant columns give 0."""
    Z = np.asarray(Z, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    Zc, Fc = Z - Z.mean(axis=0), F - F.mean(axis=0)
    zn, fn = np.linalg.norm(Zc, axis=0), np.linalg.norm(Fc, axis=0)
    C = Zc.T @ Fc
    with np.errstate(divide="ignore", invalid="ignore"):
        C = C / np.outer(zn, fn)
    return np.nan_to_num(C, nan=0.0, posinf=0.0, neginf=0.0)


def project_and_name(emb_importances, amap: AttributeMap, corr, feature_names, m: int = 3,
                     did: int = -1, method: str = "shap") -> Explanation:
    e = np.asarray(emb_importances, dtype=np.float64)
    if m > len(feature_names):
        raise ValueError(f"m={m} exceeds {len(feature_names)} features")
    latent = np.abs(amap.W.T @ e)
    score = latent @ np.abs(corr)
    top = np.argsort(-score, kind="stable")[:m]
    return Explanation(did, method, e, latent, [(feature_names[j], float(score[j])) for j in top])


def top_k(importances, k: int = 5) -> frozenset:
    return frozenset(np.argsort(-np.abs(np.asarray(importances)), kind="stable")[:k].tolist())


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    return len(a & b) / len(a | b)


def stability_score(runs) -> float:
    runs = [set(r) for r in runs]
    if len(runs) < 2:
        raise ValueError("stability needs at least two runs")
    if any(len(r) == 0 for r in runs):
        raise ValueError("stability is undefined for empty sets")
    pairs = list(itertools.combinations(runs, 2))
    return float(np.mean([jaccard(a, b) for a, b in pairs]))


def background_sample(X, size: int = 100, seed: int = 0):
    X = np.asarray(X)
    rng = np.random.default_rng(seed)
    return X[np.sort(rng.choice(len(X), size=min(size, len(X)), replace=False))]


def write_jsonl(explanations, path):
    with open(path, "w") as fh:
        for e in explanations:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]

