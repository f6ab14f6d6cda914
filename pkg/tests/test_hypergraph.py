import numpy as np
import pytest

from oracles import brute_knn, dense_diffusion, dense_zhou_laplacian
from ztseg.hypergraph import (Hypergraph, HypergraphError, connected_components, diffusion_operator,
                              knn_hyperedges, laplacian, manifold_hyperedges)
from ztseg.neighbors import knn


def random_hypergraph(rng, n, m):
    edges = [tuple(rng.choice(n, size=rng.integers(2, min(n, 6) + 1), replace=False)) for _ in range(m)]
    # make sure every vertex is covered
    edges.append(tuple(range(n)))
    return Hypergraph(n, edges, rng.uniform(0.1, 3.0, size=len(edges)))


def test_knn_matches_brute_force(rng):
    Z = rng.normal(size=(50, 5))
    idx, dist = knn(Z, 4)
    assert idx.tolist() == brute_knn(Z, 4)
    np.testing.assert_allclose(dist[:, 0], [np.linalg.norm(Z[i] - Z[idx[i, 0]]) for i in range(50)])


def test_knn_ties_prefer_lower_index():
    Z = np.zeros((5, 2))
    idx, _ = knn(Z, 2)
    assert idx[0].tolist() == [1, 2] and idx[4].tolist() == [0, 1]


def test_collinear_points_k1():
    h = knn_hyperedges(np.array([[0.0], [1.0], [3.0]]), k=1)
    got = dict(zip(h.hyperedges, h.weights))
    assert got == {(0, 1): 2.0, (1, 2): 1.0}


def test_knn_hyperedge_sizes(rng):
    h = knn_hyperedges(rng.normal(size=(1000, 3)), k=12)
    assert len(h.hyperedges) <= 1000
    assert all(len(e) == 13 for e in h.hyperedges)
    assert np.all(h.vertex_degrees() > 0)


def test_shards_keep_edges_local(rng):
    Z = rng.normal(size=(40, 3))
    shards = [np.arange(0, 20), np.arange(20, 40)]
    for h in (knn_hyperedges(Z, 3, shards), manifold_hyperedges(Z, 3, 2, shards)):
        for e in h.hyperedges:
            assert len({v // 20 for v in e}) == 1
    with pytest.raises(HypergraphError):
        knn_hyperedges(Z, 3, [np.arange(3), np.arange(3, 40)])


def test_manifold_pairs_never_cross():
    Z = np.array([[0.0, 0.0], [0.1, 0.0], [100.0, 0.0], [100.1, 0.0]])
    h = manifold_hyperedges(Z, k=1, t=2)
    for e in h.hyperedges:
        assert set(e) in ({0, 1}, {2, 3})


def test_manifold_t1_ranks_by_affinity(rng):
    Z = rng.normal(size=(25, 3))
    A, _, _ = diffusion_operator(Z, 4, 1)
    h = manifold_hyperedges(Z, k=4, t=1)
    A = A.toarray()
    expected = set()
    for i in range(25):
        row = A[i].copy()
        row[i] = -1
        top = sorted(np.flatnonzero(row > 0), key=lambda j: (-row[j], j))[:4]
        expected.add(tuple(sorted([i, *top])))
    assert set(h.hyperedges) == expected


def two_moons(n, rng):
    a = np.linspace(0, np.pi, n // 2)
    top = np.c_[np.cos(a), np.sin(a)]
    bot = np.c_[1 - np.cos(a), 0.5 - np.sin(a)]
    return np.vstack([top, bot]) + 0.05 * rng.normal(size=(n, 2))


def test_diffusion_matches_dense_power(rng):
    Z = two_moons(30, rng)
    _, _, Pt = diffusion_operator(Z, 5, 3)
    np.testing.assert_allclose(Pt.toarray(), dense_diffusion(Z, 5, 3), atol=1e-10)


def test_manifold_weights_and_sizes(rng):
    Z = two_moons(60, rng)
    h = manifold_hyperedges(Z, k=5, t=3)
    assert all(len(e) <= 6 for e in h.hyperedges) and np.all(h.weights > 0)
    with pytest.raises(HypergraphError):
        manifold_hyperedges(Z, k=5, t=0)


def test_single_hyperedge_laplacian():
    L, dv = laplacian(Hypergraph(3, [(0, 1, 2)], [1.0]))
    np.testing.assert_allclose(dv, 1.0)
    np.testing.assert_allclose(L.toarray(), np.eye(3) - np.ones((3, 3)) / 3, atol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(L.toarray()), [0, 1, 1], atol=1e-12)


def test_disjoint_hyperedges_two_zero_eigenvalues():
    h = Hypergraph(5, [(0, 1), (2, 3, 4)], [1.0, 2.0])
    L = laplacian(h)[0].toarray()
    assert np.all(L[:2, 2:] == 0)
    assert np.sum(np.abs(np.linalg.eigvalsh(L)) < 1e-12) == 2 == connected_components(h)


@pytest.mark.parametrize("seed", range(25))
def test_laplacian_matches_dense_and_is_psd(seed):
    rng = np.random.default_rng(seed)
    n = 12 if seed == 0 else int(rng.integers(5, 40))
    h = random_hypergraph(rng, n, 6 if seed == 0 else int(rng.integers(3, 30)))
    L = laplacian(h)[0].toarray()
    np.testing.assert_allclose(L, dense_zhou_laplacian(n, h.hyperedges, h.weights), atol=1e-12)
    assert np.array_equal(L, L.T)
    V = rng.normal(size=(n, 100))
    assert np.all(np.einsum("ij,ij->j", V, L @ V) >= -1e-10)


def test_weight_scale_invariance(rng):
    h = random_hypergraph(rng, 15, 8)
    h2 = Hypergraph(15, h.hyperedges, 7.5 * h.weights)
    np.testing.assert_allclose(laplacian(h)[0].toarray(), laplacian(h2)[0].toarray(), atol=1e-14)


def test_invariant_violations():
    with pytest.raises(HypergraphError):
        Hypergraph(3, [(0,)], [1.0])
    with pytest.raises(HypergraphError):
        Hypergraph(3, [(0, 3)], [1.0])
    with pytest.raises(HypergraphError):
        Hypergraph(3, [(0, 1)], [0.0])
    with pytest.raises(HypergraphError, match="zero degree"):
        laplacian(Hypergraph(3, [(0, 1)], [1.0]))


def test_jsonl_roundtrip(tmp_path, rng):
    h = manifold_hyperedges(rng.normal(size=(30, 2)), k=3, t=2)
    h.save_jsonl(tmp_path / "h.jsonl")
    back = Hypergraph.load_jsonl(tmp_path / "h.jsonl", 30, h.mode)
    assert back.hyperedges == [tuple(sorted(e)) for e in h.hyperedges]
    np.testing.assert_array_equal(back.weights, h.weights)
