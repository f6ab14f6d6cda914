import numpy as np
import pytest

from oracles import dbi_loop, f1_by_hand, silhouette_loop
from ztseg.explain import fit_surrogate
from ztseg.metrics import (davies_bouldin, evaluate, f1_scores, purity_contamination, render_table, silhouette,
                           surrogate_fidelity)


def blobs(rng, n, k, spread=8.0):
    centers = rng.uniform(-spread, spread, size=(k, 2))
    lab = rng.integers(0, k, n)
    return centers[lab] + rng.normal(size=(n, 2)), lab


def test_silhouette_limits():
    X = np.array([[0.0, 0.0], [0.0, 0.001], [100.0, 0.0], [100.0, 0.001]])
    assert silhouette(X, [0, 0, 1, 1]) == pytest.approx(1.0, abs=1e-4)
    assert silhouette(np.zeros((6, 2)), [0, 0, 0, 1, 1, 1]) <= 0
    with pytest.raises(ValueError):
        silhouette(X, [0, 0, -1, -1])


def test_silhouette_matches_exhaustive_oracle(rng):
    X, lab = blobs(rng, 1500, 5)
    lab[:30] = -1
    assert silhouette(X, lab, sample_cap=2000) == pytest.approx(silhouette_loop(X, lab), abs=1e-12)
    # a sub-sample stays close to the full value
    assert silhouette(X, lab, sample_cap=500, seed=1) == pytest.approx(silhouette_loop(X, lab), abs=0.05)


def test_dbi_cases(rng):
    X = np.r_[rng.normal(0, 0.01, (20, 2)), rng.normal(50, 0.01, (20, 2))]
    assert davies_bouldin(X, [0] * 20 + [1] * 20) < 0.01
    Y = rng.normal(size=(40, 2))
    assert davies_bouldin(np.r_[Y, Y], [0] * 40 + [1] * 40) > 5
    X, lab = blobs(rng, 300, 3)
    assert davies_bouldin(X, lab) == pytest.approx(dbi_loop(X, lab), abs=1e-12)


def test_metric_invariances(rng):
    X, lab = blobs(rng, 400, 4)
    relabel = np.array([3, 0, 2, 1])[lab]
    s, d = silhouette(X, lab), davies_bouldin(X, lab)
    assert silhouette(X, relabel) == pytest.approx(s, abs=1e-12)
    assert davies_bouldin(X, relabel) == pytest.approx(d, abs=1e-12)
    assert silhouette(X + 17.0, lab) == pytest.approx(s, abs=1e-9)
    assert davies_bouldin(X - 5.0, lab) == pytest.approx(d, abs=1e-9)
    assert silhouette(3.5 * X, lab) == pytest.approx(s, abs=1e-9)


def test_purity_contamination_cases():
    rows, agg = purity_contamination(np.array([0, 0, 0, 0, 1, 1, -1]), np.array([1, 1, 1, 0, 0, 0, 1]))
    r0, r1 = rows
    assert (r0.purity, r0.dominant, r0.contamination) == (0.75, "attack", 0.25)
    assert (r1.purity, r1.dominant, r1.contamination) == (1.0, "benign", 0.0)
    assert agg["c_benign_to_attack"] == 0.25 and agg["c_attack_to_benign"] == 0.0
    assert agg["purity_weighted"] == pytest.approx(5 / 6)
    assert agg["noise_fraction"] == pytest.approx(1 / 7) and agg["noise_attack_fraction"] == 1.0
    with pytest.raises(ValueError):
        purity_contamination([0], None)


def test_purity_plus_contamination_is_one(rng):
    labels = rng.integers(-1, 12, 500)
    truth = rng.integers(0, 2, 500)
    rows, _ = purity_contamination(labels, truth)
    assert all(r.purity + r.contamination == 1.0 for r in rows)
    _, agg = purity_contamination(labels, truth)
    _, agg2 = purity_contamination(np.where(labels >= 0, 11 - labels, -1), truth)
    assert agg == agg2


def test_f1_hand_built_confusion():
    # class 0: tp 3, fp 1, fn 2; class 1: tp 4, fp 2, fn 1
    y_true = [0] * 5 + [1] * 5
    y_pred = [0, 0, 0, 1, 1, 1, 1, 1, 1, 0]
    acc, macro, micro = f1_scores(y_true, y_pred)
    assert acc == pytest.approx(7 / 10, abs=1e-12)
    assert macro == pytest.approx((f1_by_hand(3, 1, 2) + f1_by_hand(4, 2, 1)) / 2, abs=1e-12)
    assert micro == pytest.approx(f1_by_hand(7, 3, 3), abs=1e-12)
    with pytest.raises(ValueError):
        f1_scores([], [])


def test_fidelity_memorized_and_chance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    y = rng.integers(0, 3, 200)
    assert surrogate_fidelity(fit_surrogate(X, y, k=5), X, y)[0] == 1.0
    accs = []
    for seed in range(10):
        r = np.random.default_rng(seed)
        X = r.normal(size=(400, 3))
        y = r.integers(0, 2, 400)
        accs.append(surrogate_fidelity(fit_surrogate(X[:200], y[:200], k=25), X[200:], y[200:])[0])
    assert np.mean(accs) == pytest.approx(0.5, abs=0.05)


def test_evaluate_and_table(rng):
    X, lab = blobs(rng, 300, 3)
    rep = evaluate(X, lab, truth=(lab == 0).astype(int), label="demo")
    d = rep.to_dict()
    assert d["security_available"] and d["n_clusters"] == 3
    assert evaluate(X, lab).to_dict()["security_available"] is False
    one = evaluate(X, np.zeros(300, int))
    assert one.silhouette is None and one.dbi is None
    text = render_table([rep, one])
    assert "demo" in text and "n/a" in text
