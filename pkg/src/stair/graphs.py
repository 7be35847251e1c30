"""Normalized bipartite and multimodal kNN similarity graphs.

Graphs are plain ``scipy.sparse.csr_matrix`` objects in canonical form
(sorted column indices, no duplicates, no explicit zeros).
"""

from __future__ import annotations

import logging
import struct
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionDataset, ModalityFeatures

logger = logging.getLogger(__name__)

SPGR_MAGIC = b"SPGR"


class GraphError(ValueError):
    pass


def _canonical(mat) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=np.float64)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def sym_normalize(adj) -> sp.csr_matrix:
    """D^{-1/2} A D^{-1/2} with D the row sums of A. Zero-degree rows stay zero."""
    adj = _canonical(adj)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    return _canonical(d @ adj @ d)


def bipartite_adjacency(ds: InteractionDataset) -> sp.csr_matrix:
    r = ds.train_matrix.copy()
    r.data[:] = 1.0
    return _canonical(sp.bmat([[None, r], [r.T, None]], format="csr"))


def build_bipartite_graph(ds: InteractionDataset) -> sp.csr_matrix:
    """Normalized user-item graph over ``num_users + num_items`` nodes; users first."""
    if len(ds.train) == 0:
        raise GraphError("no train interactions")
    adj = bipartite_adjacency(ds)
    deg = np.diff(adj.indptr)
    if np.any(deg == 0):
        raise GraphError(f"{int(np.sum(deg == 0))} nodes have no train edge; run k-core filtering first")
    return sym_normalize(adj)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the ``k`` largest scores, best first.

    Ties are broken by the smaller column index, so the result does not depend
    on the partition algorithm.
    """
    scores = np.asarray(scores)
    n_rows, n_cols = scores.shape
    if k <= 0:
        return np.zeros((n_rows, 0), dtype=np.int64)
    if k >= n_cols:
        return np.lexsort((np.broadcast_to(np.arange(n_cols), scores.shape), -scores), axis=1)
    part = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    rows = np.arange(n_rows)[:, None]
    kth = scores[rows, part].min(axis=1)
    n_ge = (scores >= kth[:, None]).sum(axis=1)
    out = np.empty((n_rows, k), dtype=np.int64)
    clean = n_ge == k
    if clean.any():
        p = part[clean]
        s = scores[clean][np.arange(len(p))[:, None], p]
        order = np.lexsort((p, -s), axis=1)
        out[clean] = np.take_along_axis(p, order, axis=1)
    for r in np.flatnonzero(~clean):
        cand = np.flatnonzero(scores[r] >= kth[r])
        order = np.lexsort((cand, -scores[r, cand]))
        out[r] = cand[order[:k]]
    return out


def cosine_normalize(matrix: np.ndarray, name: str = "features") -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    if zero.any():
        warnings.warn(f"{name}: {int(zero.sum())} zero-norm rows get cosine 0 against every item", stacklevel=3)
        norms = np.where(zero, 1.0, norms)
    return x / norms[:, None]


def knn_neighbors(features: ModalityFeatures | np.ndarray, k: int, block_size: int = 1024) -> np.ndarray:
    """Top-``k`` cosine neighbors of every item, self excluded.

    Returns an ``(num_items, k)`` index array sorted by decreasing similarity.
    Cosines are compared at 12 decimals; ties go to the smaller index.
    """
    mat = features.matrix if isinstance(features, ModalityFeatures) else features
    name = features.modality_id if isinstance(features, ModalityFeatures) else "features"
    n = mat.shape[0]
    if not 1 <= k < n:
        raise GraphError(f"k must satisfy 1 <= k < num_items ({n}), got {k}")
    x = cosine_normalize(mat, name)
    out = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, block_size):
        hi = min(n, lo + block_size)
        # rounding makes mathematically tied cosines compare equal
        sims = np.round(x[lo:hi] @ x.T, 12)
        sims[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        out[lo:hi] = top_k_indices(sims, k)
    return out


def similarity_counts(neighbor_lists: Sequence[np.ndarray], num_items: int | None = None) -> sp.csr_matrix:
    """Symmetric count matrix S with S_ij = max(Ŝ_ij, Ŝ_ji).

    Ŝ_ij counts the modalities in which j is one of i's neighbors.
    """
    if not neighbor_lists:
        raise GraphError("need at least one modality neighbor list")
    n = num_items if num_items is not None else neighbor_lists[0].shape[0]
    counts = sp.csr_matrix((n, n), dtype=np.float64)
    for nb in neighbor_lists:
        nb = np.asarray(nb)
        if nb.shape[0] != n:
            raise GraphError("neighbor lists index different item universes")
        rows = np.repeat(np.arange(n), nb.shape[1])
        counts = counts + sp.csr_matrix((np.ones(nb.size), (rows, nb.ravel())), shape=(n, n))
    counts = _canonical(counts)
    sym = counts.maximum(counts.T).tolil()
    sym.setdiag(0)
    return _canonical(sym)


def build_similarity_graph(neighbor_lists: Sequence[np.ndarray], num_items: int | None = None) -> sp.csr_matrix:
    """Normalized multimodal item-item graph S̃ from per-modality neighbor lists."""
    return sym_normalize(similarity_counts(neighbor_lists, num_items))


def build_modality_graph(features: Sequence[ModalityFeatures], ks: dict[str, int]) -> sp.csr_matrix:
    lists = [knn_neighbors(f, ks[f.modality_id]) for f in features if ks.get(f.modality_id, 0) > 0]
    return build_similarity_graph(lists, features[0].num_items)


def propagate(graph: sp.spmatrix, matrix: np.ndarray) -> np.ndarray:
    """One hop: ``graph @ matrix`` with a shape check."""
    if graph.shape[1] != matrix.shape[0]:
        raise GraphError(f"graph is {graph.shape[0]}x{graph.shape[1]} but matrix has {matrix.shape[0]} rows")
    return np.asarray(graph @ matrix)


def is_identity(graph: sp.spmatrix) -> bool:
    g = sp.csr_matrix(graph)
    n = g.shape[0]
    return (
        g.shape == (n, n)
        and g.nnz == n
        and np.array_equal(g.indices, np.arange(n))
        and np.array_equal(g.indptr, np.arange(n + 1))
        and np.all(g.data == 1.0)
    )


def check_graph(graph: sp.spmatrix, atol: float = 1e-12) -> None:
    """Assert the invariants every propagation graph must satisfy."""
    g = sp.csr_matrix(graph)
    if g.shape[0] != g.shape[1]:
        raise GraphError("graph is not square")
    if not np.all(np.isfinite(g.data)) or np.any(g.data < 0):
        raise GraphError("graph has negative or non-finite weights")
    if abs(g - g.T).max() > atol if g.nnz else False:
        raise GraphError("graph is not symmetric")
    for r in range(g.shape[0]):
        idx = g.indices[g.indptr[r]:g.indptr[r + 1]]
        if np.any(np.diff(idx) <= 0):
            raise GraphError(f"row {r} column indices not strictly increasing")


# ---------------------------------------------------------------------------
# SPGR cache: magic, u32 n, u64 nnz, u64 offsets[n+1], u32 indices[nnz], f64 values[nnz]


def write_spgr(path: str | Path, graph: sp.spmatrix) -> None:
    g = _canonical(graph)
    n = g.shape[0]
    with open(path, "wb") as fh:
        fh.write(SPGR_MAGIC)
        fh.write(struct.pack("<IQ", n, g.nnz))
        fh.write(np.ascontiguousarray(g.indptr, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(g.indices, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(g.data, dtype="<f8").tobytes())


def read_spgr(path: str | Path) -> sp.csr_matrix:
    raw = Path(path).read_bytes()
    if raw[:4] != SPGR_MAGIC:
        raise GraphError(f"{path}: not an SPGR file")
    n, nnz = struct.unpack("<IQ", raw[4:16])
    expected = 16 + 8 * (n + 1) + 4 * nnz + 8 * nnz
    if len(raw) != expected:
        raise GraphError(f"{path}: expected {expected} bytes for n={n}, nnz={nnz}, got {len(raw)}")
    off = 16
    indptr = np.frombuffer(raw, "<u8", n + 1, off).astype(np.int64)
    off += 8 * (n + 1)
    indices = np.frombuffer(raw, "<u4", nnz, off).astype(np.int32)
    off += 4 * nnz
    data = np.frombuffer(raw, "<f8", nnz, off).copy()
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))
