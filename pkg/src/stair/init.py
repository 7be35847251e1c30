"""Embedding initialization: whitened modality features, mean-pooled users, k-means."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionDataset, ModalityFeatures


@dataclass(eq=False)
class EmbeddingTable:
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray

    def __post_init__(self):
        if self.user_embeddings.shape[1] != self.item_embeddings.shape[1]:
            raise ValueError("user and item embeddings must share the same dimension")

    @property
    def dim(self) -> int:
        return self.item_embeddings.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def stacked(self) -> np.ndarray:
        """Users then items, matching the bipartite graph layout."""
        return np.vstack([self.user_embeddings, self.item_embeddings])

    @classmethod
    def from_stacked(cls, E: np.ndarray, num_users: int) -> "EmbeddingTable":
        return cls(E[:num_users].copy(), E[num_users:].copy())

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.user_embeddings.copy(), self.item_embeddings.copy())


# ---------------------------------------------------------------------------
# truncated SVD


def fix_signs(U: np.ndarray, *others: np.ndarray):
    """Flip columns so each column's largest-magnitude entry is positive.

    ``others`` are flipped along their rows (e.g. Vᵀ) to keep the product intact.
    """
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return (U * signs, *[o * signs[:, None] for o in others])


def truncated_svd(X: np.ndarray, k: int, oversample: int = 8, power_iters: int = 4, seed: int = 0):
    """Top-``k`` SVD via randomized subspace iteration.

    Falls back to a dense SVD when the sketch would cover the smaller
    dimension anyway. Returns ``(U, s, Vt)`` with the sign convention of
    :func:`fix_signs`.
    """
    X = np.asarray(X, dtype=np.float64)
    n, m = X.shape
    k = min(k, n, m)
    sketch = k + oversample
    if sketch >= min(n, m):
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        U, s, Vt = U[:, :k], s[:k], Vt[:k]
    else:
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(X @ rng.standard_normal((m, sketch)))
        for _ in range(power_iters):
            Z, _ = np.linalg.qr(X.T @ Q)
            Q, _ = np.linalg.qr(X @ Z)
        Ub, s, Vt = np.linalg.svd(Q.T @ X, full_matrices=False)
        U, s, Vt = (Q @ Ub)[:, :k], s[:k], Vt[:k]
    U, Vt = fix_signs(U, Vt)
    return U, s, Vt


WHITEN_SCALES = ("unit-variance", "unit-norm")


def _whiten(X: np.ndarray, d: int, seed: int, scale: str = "unit-variance", rank_tol: float = 1e-10) -> np.ndarray:
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    U, s, _ = truncated_svd(Xc, d, seed=seed)
    keep = s > rank_tol * max(s[0] if len(s) else 0.0, np.finfo(float).tiny)
    out = np.zeros((n, d))
    out[:, :U.shape[1]] = U * keep
    if keep.sum() < d:
        warnings.warn(f"feature matrix has numeric rank {int(keep.sum())} < d={d}; padding with zero columns",
                      stacklevel=3)
    return np.sqrt(n) * out if scale == "unit-variance" else out


def _row_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def whiten_init(
    features: Sequence[ModalityFeatures] | Sequence[np.ndarray],
    d: int,
    strategy: str = "concat-then-whiten",
    seed: int = 0,
    scale: str = "unit-variance",
) -> np.ndarray:
    """Item embeddings from the top-``d`` left singular vectors of centered features.

    Each modality is row-L2-normalized first. With ``concat-then-whiten`` the
    modalities are concatenated column-wise and whitened jointly; with
    ``whiten-then-concat`` each modality is whitened on its own share of the
    ``d`` columns. With ``scale="unit-variance"`` columns are multiplied by
    ``sqrt(num_items)``; ``"unit-norm"`` keeps the raw singular vectors.
    """
    if scale not in WHITEN_SCALES:
        raise ValueError(f"unknown whitening scale {scale!r}")
    mats = [f.matrix if isinstance(f, ModalityFeatures) else np.asarray(f) for f in features]
    if not mats:
        raise ValueError("need at least one feature matrix")
    n = mats[0].shape[0]
    if any(m.shape[0] != n for m in mats):
        raise ValueError("feature matrices are not row-aligned")
    mats = [_row_normalize(m) for m in mats]
    if strategy == "concat-then-whiten":
        return _whiten(np.hstack(mats), d, seed, scale)
    if strategy == "whiten-then-concat":
        shares = [d // len(mats) + (1 if r < d % len(mats) else 0) for r in range(len(mats))]
        return np.hstack([_whiten(m, k, seed, scale) for m, k in zip(mats, shares) if k > 0])
    raise ValueError(f"unknown whitening strategy {strategy!r}")


def meanpool_user_init(item_embeddings: np.ndarray, ds: InteractionDataset) -> np.ndarray:
    """E_U[u] = mean of E_I over the user's train items."""
    r = ds.train_matrix
    deg = np.diff(r.indptr)
    if np.any(deg == 0):
        raise ValueError("every user needs at least one train interaction for mean pooling")
    r = sp.diags(1.0 / deg) @ r
    return np.asarray(r @ item_embeddings)


def random_init(num_rows: int, d: int, rng: np.random.Generator, std: float = 0.01) -> np.ndarray:
    return rng.normal(0.0, std, size=(num_rows, d))


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (points ** 2).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plus_plus(points: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [rng.integers(n)]
    closest = _sq_dists(points, points[centers]).ravel()
    for _ in range(1, C):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a center
            remaining = np.setdiff1d(np.arange(n), centers)
            nxt = rng.choice(remaining)
        else:
            nxt = rng.choice(n, p=closest / total)
        centers.append(nxt)
        closest = np.minimum(closest, _sq_dists(points, points[[nxt]]).ravel())
    return points[centers].copy()


def kmeans(points: np.ndarray, C: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops once no centroid moves by more than ``tol``. A cluster that empties
    out is re-seeded at the point currently farthest from its centroid.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= C <= n:
        raise ValueError(f"need 1 <= C <= n, got C={C}, n={n}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plus_plus(x, C, rng)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        dist = _sq_dists(x, centroids)
        labels = dist.argmin(axis=1)
        history.append(float(dist[np.arange(n), labels].sum()))
        new = np.zeros_like(centroids)
        np.add.at(new, labels, x)
        counts = np.bincount(labels, minlength=C)
        point_cost = dist[np.arange(n), labels]
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(point_cost))
            new[c] = x[far]
            counts[c] = 1
            point_cost[far] = -1.0
            old = labels[far]
            labels[far] = c
            counts[old] -= 1
            new[old] -= x[far]
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        new[~nonempty] = centroids[~nonempty]
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    dist = _sq_dists(x, centroids)
    labels = dist.argmin(axis=1)
    inertia = float(dist[np.arange(n), labels].sum())
    history.append(inertia)
    return KMeansResult(labels, centroids, inertia, it, history)
