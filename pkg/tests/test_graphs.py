import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import random_dataset
from stair.dataset import InteractionDataset, ModalityFeatures
from stair.graphs import (
    GraphError,
    build_bipartite_graph,
    build_similarity_graph,
    check_graph,
    knn_neighbors,
    propagate,
    read_spgr,
    similarity_counts,
    sym_normalize,
    top_k_indices,
    write_spgr,
)


def dense_sym_normalize(A):
    deg = A.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv[:, None] * A * inv[None, :]


def exhaustive_knn(F, k):
    """Full sort of the cosine table per row: (-similarity, index) order."""
    F = np.asarray(F, dtype=np.float64)
    n = len(F)
    out = []
    for i in range(n):
        sims = []
        for j in range(n):
            if j == i:
                continue
            ni, nj = np.linalg.norm(F[i]), np.linalg.norm(F[j])
            c = 0.0 if ni == 0 or nj == 0 else float(F[i] @ F[j]) / (ni * nj)
            sims.append((-round(c, 12), j))
        out.append([j for _, j in sorted(sims)[:k]])
    return np.array(out)


def test_single_edge_graph():
    g = build_bipartite_graph(InteractionDataset(1, 1, [(0, 0)]))
    np.testing.assert_array_equal(g.toarray(), [[0, 1], [1, 0]])


def test_star_graph():
    g = build_bipartite_graph(InteractionDataset(1, 2, [(0, 0), (0, 1)])).toarray()
    w = 1 / np.sqrt(2)
    np.testing.assert_allclose(g, [[0, w, w], [w, 0, 0], [w, 0, 0]], atol=1e-15)


@pytest.mark.parametrize("seed", range(8))
def test_bipartite_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, rng.integers(2, 25), rng.integers(2, 25))
    n = ds.num_users + ds.num_items
    A = np.zeros((n, n))
    for u, i in ds.train:
        A[u, ds.num_users + i] = A[ds.num_users + i, u] = 1.0
    g = build_bipartite_graph(ds)
    np.testing.assert_allclose(g.toarray(), dense_sym_normalize(A), rtol=0, atol=1e-12)
    check_graph(g)


def test_spectral_radius_bounded():
    rng = np.random.default_rng(5)
    for _ in range(5):
        g = build_bipartite_graph(random_dataset(rng, 15, 12))
        x = rng.standard_normal(g.shape[0])
        for _ in range(200):
            x = g @ x
            x /= np.linalg.norm(x)
        assert np.linalg.norm(g @ x) <= 1 + 1e-9
        y = rng.standard_normal(g.shape[0])
        y /= np.linalg.norm(y)
        assert np.linalg.norm(g @ y) <= 1 + 1e-9


def test_knn_orthogonal_rows_tie_break_to_zero():
    nb = knn_neighbors(np.eye(5), 1)
    np.testing.assert_array_equal(nb.ravel(), [1, 0, 0, 0, 0])


def test_knn_four_item_table():
    F = np.array([[1, 0], [0.9, 0.1], [0, 1], [-1, 0]])
    np.testing.assert_array_equal(knn_neighbors(F, 1).ravel(), [1, 0, 1, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 60), st.integers(1, 6), st.integers(0, 10_000), st.booleans())
def test_knn_matches_exhaustive_oracle(n, k, seed, coarse):
    rng = np.random.default_rng(seed)
    k = min(k, n - 1)
    F = rng.integers(-2, 3, size=(n, 3)).astype(float) if coarse else rng.standard_normal((n, 5))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got = knn_neighbors(F, k, block_size=7)
    np.testing.assert_array_equal(got, exhaustive_knn(F, k))
    assert not np.any(got == np.arange(n)[:, None])


def test_knn_zero_row_warns():
    F = np.array([[1.0, 0], [0, 0], [0, 1.0]])
    with pytest.warns(UserWarning, match="zero-norm"):
        knn_neighbors(ModalityFeatures("visual", F), 1)


def test_knn_rejects_bad_k():
    with pytest.raises(GraphError):
        knn_neighbors(np.eye(3), 3)


def test_top_k_ties_prefer_small_index():
    s = np.array([[1.0, 3.0, 3.0, 3.0, 0.0], [2.0, 2.0, 2.0, 2.0, 2.0]])
    np.testing.assert_array_equal(top_k_indices(s, 2), [[1, 2], [0, 1]])
    np.testing.assert_array_equal(top_k_indices(s, 5)[0], [1, 2, 3, 0, 4])


def test_similarity_both_modalities_gives_two():
    text = np.array([[1], [0], [1]])
    vis = np.array([[1], [2], [0]])
    S = similarity_counts([text, vis]).toarray()
    assert S[0, 1] == 2 and S[1, 0] == 2


def test_similarity_one_sided_neighbor_is_symmetrized():
    nb = np.array([[1], [2], [1]])  # 0 -> 1, but 1 never names 0
    S = similarity_counts([nb]).toarray()
    assert S[0, 1] == 1 and S[1, 0] == 1


@pytest.mark.parametrize("seed", range(5))
def test_similarity_graph_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 200))
    lists = [knn_neighbors(rng.standard_normal((n, 6)), int(k)) for k in (rng.integers(1, 4), rng.integers(1, 6))]
    S_hat = np.zeros((n, n))
    for nb in lists:
        for i in range(n):
            for j in nb[i]:
                S_hat[i, j] += 1
    S = np.maximum(S_hat, S_hat.T)
    np.fill_diagonal(S, 0)
    counts = similarity_counts(lists).toarray()
    np.testing.assert_array_equal(counts, S)
    assert set(np.unique(counts)) <= {0, 1, 2}
    assert np.all((counts > 0).sum(axis=1) >= max(nb.shape[1] for nb in lists))
    np.testing.assert_allclose(build_similarity_graph(lists).toarray(), dense_sym_normalize(S), rtol=0, atol=1e-12)


def test_propagate_zero_graph():
    out = propagate(sp.csr_matrix((4, 4)), np.ones((4, 2)))
    assert not out.any()


def test_propagate_matches_dense_and_symmetry(rng):
    ds = random_dataset(rng, 3, 5)
    g = build_bipartite_graph(ds)
    X = rng.standard_normal((8, 3))
    np.testing.assert_allclose(propagate(g, X), g.toarray() @ X, rtol=0, atol=1e-12)
    x, y = rng.standard_normal(8), rng.standard_normal(8)
    assert abs(x @ propagate(g, y[:, None]).ravel() - propagate(g, x[:, None]).ravel() @ y) <= 1e-10


def test_propagate_shape_mismatch():
    with pytest.raises(GraphError):
        propagate(sp.eye(3, format="csr"), np.ones((4, 2)))


def test_spgr_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    g = build_similarity_graph([knn_neighbors(rng.standard_normal((30, 4)), 3)])
    write_spgr(tmp_path / "s.spgr", g)
    back = read_spgr(tmp_path / "s.spgr")
    assert (back != g).nnz == 0
    raw = (tmp_path / "s.spgr").read_bytes()
    assert raw[:4] == b"SPGR"
    (tmp_path / "t.spgr").write_bytes(raw[:-1])
    with pytest.raises(GraphError):
        read_spgr(tmp_path / "t.spgr")


def test_sym_normalize_isolated_node_stays_zero():
    A = sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float))
    np.testing.assert_array_equal(sym_normalize(A).toarray()[2], 0)
