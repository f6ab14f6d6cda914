"""Structural cluster quality, oracle purity/contamination and surrogate fidelity."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .neighbors import pairwise_sq


def _non_noise(X, labels):
    labels = np.asarray(labels)
    keep = labels >= 0
    X = np.asarray(X, dtype=np.float64)[keep]
    lab = labels[keep]
    if len(np.unique(lab)) < 2:
        raise ValueError("metric needs at least two non-noise clusters")
    return X, lab


def silhouette(X, labels, sample_cap: int = 10_000, seed: int = 0) -> float:
    """Mean silhouette over a seed-fixed sample, distances taken against all points."""
    X, lab = _non_noise(X, labels)
    ids, inv = np.unique(lab, return_inverse=True)
    counts = np.bincount(inv)
    n = len(X)
    if sample_cap >= n:
        rows = np.arange(n)
    else:
        rows = np.sort(np.random.default_rng(seed).choice(n, size=sample_cap, replace=False))
    s = np.empty(len(rows))
    chunk = 1024
    for a in range(0, len(rows), chunk):
        r = rows[a:a + chunk]
        D = np.sqrt(pairwise_sq(X[r], X))
        sums = np.zeros((len(r), len(ids)))
        for j in range(len(ids)):
            sums[:, j] = D[:, inv == j].sum(axis=1)
        own = inv[r]
        own_n = counts[own]
        with np.errstate(divide="ignore", invalid="ignore"):
            a_i = sums[np.arange(len(r)), own] / (own_n - 1)
        means = sums / counts
        means[np.arange(len(r)), own] = np.inf
        b_i = means.min(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            si = (b_i - a_i) / np.maximum(a_i, b_i)
        # singleton clusters score 0; coincident a = b = 0 scores 0
        s[a:a + chunk] = np.where((own_n > 1) & np.isfinite(si), si, 0.0)
    return float(s.mean())


def davies_bouldin(X, labels) -> float:
    X, lab = _non_noise(X, labels)
    ids, inv = np.unique(lab, return_inverse=True)
    cents = np.array([X[inv == j].mean(axis=0) for j in range(len(ids))])
    scatter = np.array([np.linalg.norm(X[inv == j] - cents[j], axis=1).mean() for j in range(len(ids))])
    M = np.sqrt(pairwise_sq(cents, cents))
    with np.errstate(divide="ignore", invalid="ignore"):
        R = (scatter[:, None] + scatter[None, :]) / M
    R[np.isnan(R)] = 0.0  # two zero-scatter clusters at the same spot
    np.fill_diagonal(R, -np.inf)
    return float(R.max(axis=1).mean())


@dataclass
class ClusterPurity:
    cluster: int
    size: int
    n_attack: int
    dominant: str
    purity: float
    contamination: float


def purity_contamination(labels, truth):
    """Per-cluster purity plus aggregates over non-noise clusters.

    Benign-dominated clusters report the attack fraction (A->B); attack-dominated
    ones report the benign fraction (B->A). Ties count as benign-dominated.
    """
    if truth is None:
        raise ValueError("purity needs ground-truth labels")
    labels = np.asarray(labels)
    truth = np.asarray(truth).astype(np.int64)
    if len(truth) != len(labels):
        raise ValueError("truth and labels differ in length")
    rows = []
    for c in np.unique(labels[labels >= 0]):
        m = labels == c
        n, na = int(m.sum()), int(truth[m].sum())
        attack = na > n - na
        maj = na if attack else n - na
        rows.append(ClusterPurity(int(c), n, na, "attack" if attack else "benign", maj / n, 1.0 - maj / n))
    sizes = np.array([r.size for r in rows], dtype=float)
    pur = np.array([r.purity for r in rows])
    benign = np.array([r.dominant == "benign" for r in rows], dtype=bool)

    def weighted(mask):
        return float(np.sum(sizes[mask] * (1 - pur[mask])) / sizes[mask].sum()) if mask.any() else 0.0

    noise = labels < 0
    agg = {
        "purity_weighted": float(np.sum(sizes * pur) / sizes.sum()) if len(rows) else float("nan"),
        "purity_mean": float(pur.mean()) if len(rows) else float("nan"),
        "c_attack_to_benign": weighted(benign),
        "c_benign_to_attack": weighted(~benign),
        "noise_fraction": float(noise.mean()),
        "noise_attack_fraction": float(truth[noise].mean()) if noise.any() else 0.0,
    }
    return rows, agg


def confusion(y_true, y_pred):
    classes = np.unique(np.concatenate([y_true, y_pred]))
    ti, pi = np.searchsorted(classes, y_true), np.searchsorted(classes, y_pred)
    C = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(C, (ti, pi), 1)
    return classes, C


def f1_scores(y_true, y_pred):
    """Accuracy, macro-F1 and micro-F1 (classes from the union of both label sets)."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty evaluation set")
    _, C = confusion(y_true, y_pred)
    tp = np.diag(C).astype(float)
    fp = C.sum(axis=0) - tp
    fn = C.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    acc = tp.sum() / C.sum()
    micro = 2 * tp.sum() / (2 * tp.sum() + fp.sum() + fn.sum())
    return float(acc), float(f1.mean()), float(micro)


def surrogate_fidelity(surrogate, X_test, labels_test):
    return f1_scores(np.asarray(labels_test), surrogate.predict(X_test))


@dataclass
class EvalReport:
    silhouette: float | None
    dbi: float | None
    n_clusters: int
    size_quantiles: dict
    noise_fraction: float
    security: dict | None = None
    per_cluster: list = field(default_factory=list)
    fidelity: dict | None = None
    explain_stability: dict | None = None
    label: str = ""

    def to_dict(self):
        d = asdict(self)
        d["security_available"] = self.security is not None
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _size_quantiles(labels):
    _, sizes = np.unique(labels[labels >= 0], return_counts=True)
    if not len(sizes):
        return {}
    return {"min": int(sizes.min()), "q25": float(np.percentile(sizes, 25)), "median": float(np.median(sizes)),
            "q75": float(np.percentile(sizes, 75)), "max": int(sizes.max())}


def evaluate(X, labels, truth=None, sample_cap=10_000, seed=0, label="") -> EvalReport:
    labels = np.asarray(labels)
    ncl = int(len(np.unique(labels[labels >= 0])))
    sil = silhouette(X, labels, sample_cap, seed) if ncl >= 2 else None
    dbi = davies_bouldin(X, labels) if ncl >= 2 else None
    rep = EvalReport(sil, dbi, ncl, _size_quantiles(labels), float(np.mean(labels < 0)), label=label)
    if truth is not None:
        rows, agg = purity_contamination(labels, truth)
        rep.security = agg
        rep.per_cluster = [asdict(r) for r in rows]
    return rep


def _fmt(v, spec=".4f"):
    return "n/a" if v is None else format(v, spec)


def render_table(reports) -> str:
    """Plain-text comparison table, one line per run variant."""
    head = f"{'variant':<28}{'clusters':>9}{'silhouette':>12}{'DBI':>9}{'purity':>9}{'C_A->B':>9}{'C_B->A':>9}{'noise':>8}"
    lines = [head, "-" * len(head)]
    for r in reports:
        sec = r.security or {}
        lines.append(f"{r.label:<28}{r.n_clusters:>9d}{_fmt(r.silhouette):>12}{_fmt(r.dbi):>9}"
                     f"{_fmt(sec.get('purity_weighted')):>9}{_fmt(sec.get('c_attack_to_benign')):>9}"
                     f"{_fmt(sec.get('c_benign_to_attack')):>9}{r.noise_fraction:>8.3f}")
    for r in reports:
        if r.fidelity:
            f = r.fidelity
            lines.append(f"{r.label}: surrogate accuracy {f['accuracy']:.4f}, macro-F1 {f['macro_f1']:.4f}, "
                         f"micro-F1 {f['micro_f1']:.4f}")
        if r.explain_stability:
            s = r.explain_stability
            lines.append(f"{r.label}: stability LIME {s.get('lime', float('nan')):.4f}, "
                         f"SHAP {s.get('shap', float('nan')):.4f}")
    return "\n".join(lines)
