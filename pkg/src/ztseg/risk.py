"""Operational risk: robust-normalized components, cluster aggregation, thresholds."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CLIP = 5.0
IQR_FLOOR = 1e-9
OTSU_BINS = 256
PERCENTILES = tuple(range(50, 100, 5))


def robust_normalize(values) -> np.ndarray:
    """Map raw values to [0, 1): 0 at or below the median, saturating above.

    ``z = (v - median) / IQR`` is clipped to ``[-5, 5]``, squashed by the
    logistic function and shifted so the median lands on 0.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("robust_normalize needs finite values")
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    z = np.clip((v - med) / max(q75 - q25, IQR_FLOOR), -CLIP, CLIP)
    s = 1.0 / (1.0 + np.exp(-z))
    return np.maximum(0.0, 2.0 * (s - 0.5))


def instance_risk(e_norm, o_norm, w1: float = 0.5, w2: float = 0.5) -> np.ndarray:
    if w1 < 0 or w2 < 0 or abs(w1 + w2 - 1.0) > 1e-12:
        raise ValueError(f"risk weights must be non-negative and sum to 1, got ({w1}, {w2})")
    e = np.asarray(e_norm, dtype=np.float64)
    o = np.asarray(o_norm, dtype=np.float64)
    return np.clip(w1 * e + w2 * o, 0.0, 1.0)


def cluster_risk(r, labels) -> dict[int, float]:
    """Mean instance risk per cluster id; noise (-1) is its own group."""
    r = np.asarray(r, dtype=np.float64)
    labels = np.asarray(labels)
    ids, inv = np.unique(labels, return_inverse=True)
    sums = np.bincount(inv, weights=r)
    counts = np.bincount(inv)
    return {int(c): float(s / k) for c, s, k in zip(ids, sums, counts)}


def otsu_scores(values, bins: int = OTSU_BINS):
    """Between-class variance for every split ``t`` in ``1..bins-1`` of a histogram on [0, 1]."""
    hist, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=(0.0, 1.0))
    p = hist / max(hist.sum(), 1)
    centers = (np.arange(bins) + 0.5) / bins
    w0 = np.cumsum(p)[:-1]
    w1 = 1.0 - w0
    m0 = np.cumsum(p * centers)[:-1]
    mt = float(np.sum(p * centers))
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = np.where(w0 > 0, m0 / w0, 0.0)
        mu1 = np.where(w1 > 0, (mt - m0) / w1, 0.0)
    score = w0 * w1 * (mu0 - mu1) ** 2
    return np.where((w0 > 0) & (w1 > 0), score, 0.0)


def otsu_threshold(values, bins: int = OTSU_BINS) -> float:
    """Bin edge maximizing between-class variance.

    Equal maxima (relative 1e-12) that form one contiguous run of splits
    resolve to the middle of the first such run, rounded down; this keeps a
    perfectly bimodal histogram's threshold between its modes.
    """
    score = otsu_scores(values, bins)
    best = score.max()
    tied = np.flatnonzero(score >= best * (1 - 1e-12)) if best > 0 else np.array([0])
    run_end = 0
    while run_end + 1 < len(tied) and tied[run_end + 1] == tied[run_end] + 1:
        run_end += 1
    t = tied[run_end // 2] + 1
    return float(t / bins)


@dataclass
class ThresholdCandidates:
    percentiles: dict[str, float]
    otsu: float
    degenerate: bool = False

    def get(self, policy: str) -> float:
        if policy == "otsu":
            return self.otsu
        if policy not in self.percentiles:
            raise KeyError(f"unknown threshold policy {policy!r}; choose otsu or one of {sorted(self.percentiles)}")
        return self.percentiles[policy]

    def position_of(self, tau: float) -> str:
        """Largest percentile label the value clears, e.g. ``>p85``."""
        below = [k for k, v in self.percentiles.items() if v < tau]
        return f">{max(below, key=lambda k: int(k[1:]))}" if below else "<p50"


def threshold_candidates(cluster_values) -> ThresholdCandidates:
    R = np.asarray(list(cluster_values), dtype=np.float64)
    if len(R) == 0:
        return ThresholdCandidates({f"p{q}": 0.0 for q in PERCENTILES}, 0.0, degenerate=True)
    pct = {f"p{q}": float(np.percentile(R, q)) for q in PERCENTILES}
    if len(np.unique(R)) < 2:
        return ThresholdCandidates(pct, float(R[0]) if len(R) else 0.0, degenerate=True)
    return ThresholdCandidates(pct, otsu_threshold(R))


@dataclass
class RiskReport:
    e_norm: np.ndarray
    o_norm: np.ndarray
    r: np.ndarray
    w1: float
    w2: float
    cluster_risk: dict[int, float]
    candidates: ThresholdCandidates
    threshold_policy: str
    tau: float
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({
            "weights": [self.w1, self.w2],
            "cluster_risk": {str(k): v for k, v in sorted(self.cluster_risk.items())},
            "candidates": {**self.candidates.percentiles, "otsu": self.candidates.otsu},
            "degenerate": self.candidates.degenerate,
            "threshold_policy": self.threshold_policy,
            "tau_c": self.tau,
            "tau_position": self.candidates.position_of(self.tau),
            "fraction_clusters_allowed": self.fraction_allowed(),
            **self.extra,
        }, indent=2, sort_keys=True)

    def fraction_allowed(self):
        vals = [v for k, v in self.cluster_risk.items() if k >= 0]
        return float(np.mean(np.array(vals) <= self.tau)) if vals else 0.0


def build_risk_report(recon_error, outlierness, labels, w1=0.5, w2=0.5, threshold="otsu") -> RiskReport:
    e = robust_normalize(recon_error)
    o = robust_normalize(outlierness)
    r = instance_risk(e, o, w1, w2)
    R = cluster_risk(r, labels)
    # thresholds come from real micro-segments; the noise group is always blocked
    cands = threshold_candidates(v for k, v in R.items() if k >= 0)
    return RiskReport(e, o, r, w1, w2, R, cands, threshold, cands.get(threshold))
