import numpy as np
import pytest

from oracles import lloyd
from ztseg.segmentation import (Segmentation, kmeans_outlierness, minibatch_kmeans, segment)


def test_two_points_two_clusters():
    seg = minibatch_kmeans(np.array([[0.0, 0.0], [5.0, 1.0]]), k_clusters=2, batch=2)
    assert sorted(seg.labels.tolist()) == [0, 1]
    assert seg.inertia_history[-1] == 0.0


def test_four_blobs_match_lloyd(rng):
    centers = np.array([[0, 0], [20, 0], [0, 20], [20, 20]], dtype=float)
    X = np.vstack([c + rng.normal(size=(50, 2)) for c in centers])
    seg = minibatch_kmeans(X, k_clusters=4, batch=64, seed=3)
    ref = lloyd(X, centers)
    # same partition up to renaming
    pairs = set(zip(seg.labels.tolist(), ref.tolist()))
    assert len(pairs) == 4
    assert seg.inertia_history[-1] <= seg.inertia_history[0]


def test_kmeans_errors_and_determinism(rng):
    X = rng.normal(size=(30, 2))
    with pytest.raises(ValueError):
        minibatch_kmeans(X, k_clusters=31)
    a = minibatch_kmeans(X, 5, 8, seed=1)
    b = minibatch_kmeans(X, 5, 8, seed=1)
    assert np.array_equal(a.labels, b.labels)


def test_kmeans_outlierness_cases(rng):
    seg = Segmentation(labels=np.array([0, 0, 1]), clusterer="minibatch_kmeans")
    out = kmeans_outlierness(np.array([[0.0], [2.0], [7.0]]), seg)
    assert out.tolist() == [1.0, 1.0, 0.0]
    X = rng.normal(size=(40, 3))
    seg = minibatch_kmeans(X, 4, 16)
    loop = []
    for i, x in enumerate(X):
        members = X[seg.labels == seg.labels[i]]
        loop.append(np.sqrt(sum((x[j] - members[:, j].mean()) ** 2 for j in range(3))))
    np.testing.assert_allclose(kmeans_outlierness(X, seg), loop, atol=1e-12)


def test_segment_dispatch_and_roundtrip(tmp_path, rng):
    X = np.vstack([rng.normal(0, 1, size=(40, 2)), rng.normal(0, 1, size=(40, 2)) + 8])
    for clusterer in ("minibatch_kmeans", "hdbscan"):
        seg = segment(X, clusterer, k_clusters=3, batch=16, min_cluster_size=10)
        assert np.all(np.isfinite(seg.outlierness)) and np.all(seg.outlierness >= 0)
        ids = sorted(set(seg.labels[seg.labels >= 0].tolist()))
        assert ids == list(range(seg.n_clusters))
        seg.save(tmp_path, stem=clusterer)
        back = Segmentation.load(tmp_path, stem=clusterer)
        assert np.array_equal(back.labels, seg.labels)
        np.testing.assert_array_equal(back.outlierness, seg.outlierness)
    with pytest.raises(ValueError):
        segment(X, "optics")
