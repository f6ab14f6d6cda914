import logging
import time

import numpy as np
import pytest

from oracles import principal_angles
from ztseg.hypergraph import Hypergraph, laplacian, manifold_hyperedges
from ztseg.spectral import ConvergenceError, SpectralEmbedding, spectral_embed


def connected_random(rng, n):
    m = int(rng.integers(n // 2, 2 * n))
    edges = [tuple(rng.choice(n, size=int(rng.integers(2, 6)), replace=False)) for _ in range(m)]
    edges += [(i, i + 1) for i in range(n - 1)]  # a path keeps it connected
    return Hypergraph(n, edges, rng.uniform(0.2, 2.0, size=len(edges)))


def test_single_hyperedge_analytic():
    L, dv = laplacian(Hypergraph(3, [(0, 1, 2)], [1.0]))
    emb = spectral_embed(L, dv, d_emb=2)
    np.testing.assert_allclose(emb.eigenvalues, [1.0, 1.0], atol=1e-12)
    assert abs(emb.trivial_eigenvalue) < 1e-12
    np.testing.assert_allclose(emb.coords.T @ np.ones(3), 0.0, atol=1e-12)
    np.testing.assert_allclose(emb.coords.T @ emb.coords, np.eye(2), atol=1e-12)


def test_dense_oracle_25_instances():
    start = time.perf_counter()
    for seed in range(25):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 201))
        L, dv = laplacian(connected_random(rng, n))
        emb = spectral_embed(L, dv, d_emb=10, seed=seed)
        w, V = np.linalg.eigh(L.toarray())
        np.testing.assert_allclose(emb.eigenvalues, w[1:11], atol=1e-8)
        gap_ok = w[11] - w[10] > 1e-6
        if gap_ok:
            assert principal_angles(emb.coords, V[:, 1:11]).max() <= 1e-5
        assert np.all((emb.eigenvalues > 0) & (emb.eigenvalues <= 2))
        np.testing.assert_allclose(emb.coords.T @ emb.coords, np.eye(10), atol=1e-6)
        assert np.all(emb.residual_norms <= 1e-6)
    assert time.perf_counter() - start < 30


def test_d_emb_ten_columns(rng):
    Z = rng.normal(size=(300, 4))
    L, dv = laplacian(manifold_hyperedges(Z, 12, 3))
    assert spectral_embed(L, dv).coords.shape == (300, 10)


def test_components_law_and_warning(caplog):
    # three disjoint cliques: eigenvalue 0 has multiplicity 3
    edges = [(0, 1, 2), (3, 4, 5), (6, 7, 8, 9)]
    L, dv = laplacian(Hypergraph(10, edges, [1.0, 1.0, 1.0]))
    w = np.linalg.eigvalsh(L.toarray())
    assert np.sum(np.abs(w) < 1e-10) == 3
    with caplog.at_level(logging.WARNING, logger="ztseg.spectral"):
        emb = spectral_embed(L, dv, d_emb=3)
    np.testing.assert_allclose(emb.eigenvalues[:2], 0.0, atol=1e-8)
    assert "connected component" in caplog.text


def test_sign_determinism(rng):
    L, dv = laplacian(connected_random(rng, 80))
    a = spectral_embed(L, dv, d_emb=5, seed=1)
    b = spectral_embed(L, dv, d_emb=5, seed=1)
    assert np.array_equal(a.coords, b.coords)
    c = spectral_embed(L, dv, d_emb=5, seed=9)
    np.testing.assert_allclose(np.abs(c.coords), np.abs(a.coords), atol=1e-5)


def test_errors(rng):
    L, dv = laplacian(Hypergraph(3, [(0, 1, 2)], [1.0]))
    with pytest.raises(ValueError):
        spectral_embed(L, dv, d_emb=3)
    L, dv = laplacian(connected_random(rng, 150))
    with pytest.raises(ConvergenceError) as err:
        spectral_embed(L, dv, d_emb=10, tol=1e-15, max_iter=2)
    assert len(err.value.residuals) == 10


def test_save_load(tmp_path, rng):
    L, dv = laplacian(connected_random(rng, 40))
    emb = spectral_embed(L, dv, d_emb=4)
    emb.save(tmp_path, extra={"mode": "knn_only"})
    back = SpectralEmbedding.load(tmp_path)
    assert np.array_equal(back.coords, emb.coords)
    np.testing.assert_array_equal(back.eigenvalues, emb.eigenvalues)
