"""Full-catalog top-N ranking metrics and user behavior uncertainty."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import InteractionDataset
from .graphs import top_k_indices
from .init import kmeans


@dataclass
class EvalReport:
    split: str
    metrics: dict
    num_evaluated_users: int
    num_skipped_users: int
    per_user: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key: str) -> float:
        return self.metrics[key]

    def to_json(self) -> str:
        return json.dumps(
            {
                "split": self.split,
                "metrics": self.metrics,
                "num_evaluated_users": self.num_evaluated_users,
                "num_skipped_users": self.num_skipped_users,
            },
            indent=2,
            sort_keys=True,
        )

    def to_text(self) -> str:
        keys = sorted(self.metrics, key=lambda k: (k.split("@")[0], int(k.split("@")[1])))
        head = "  ".join(f"{k:>10}" for k in keys)
        vals = "  ".join(f"{self.metrics[k]:>10.4f}" for k in keys)
        return (
            f"split={self.split} users={self.num_evaluated_users} (skipped {self.num_skipped_users})\n"
            f"{head}\n{vals}"
        )


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def rank_and_score(
    user_repr: np.ndarray,
    item_repr: np.ndarray,
    ds: InteractionDataset,
    split: str = "test",
    N_list: Sequence[int] = (10, 20),
    mask_train: bool = True,
    block_size: int = 512,
) -> EvalReport:
    """Recall@N and NDCG@N against the full item catalog.

    Scores are inner products; a user's train items are masked to -inf before
    ranking when ``mask_train`` is set. Ties rank the smaller item index first.
    Users with nothing held out in ``split`` are skipped.
    """
    truth = ds.split_matrix(split)
    train = ds.train_matrix
    n_max = max(N_list)
    n_items = ds.num_items
    disc = _discounts(max(n_max, 1))
    idcg_table = np.concatenate([[0.0], np.cumsum(disc)])

    users = np.flatnonzero(np.diff(truth.indptr) > 0)
    recall = {n: np.zeros(len(users)) for n in N_list}
    ndcg = {n: np.zeros(len(users)) for n in N_list}

    for lo in range(0, len(users), block_size):
        batch = users[lo:lo + block_size]
        scores = np.asarray(user_repr[batch], dtype=np.float64) @ np.asarray(item_repr, dtype=np.float64).T
        if mask_train:
            sub = train[batch]
            rows = np.repeat(np.arange(len(batch)), np.diff(sub.indptr))
            scores[rows, sub.indices] = -np.inf
        top = top_k_indices(scores, min(n_max, n_items))
        rel = truth[batch]
        n_rel = np.diff(rel.indptr)
        # membership test through sorted (row, item) keys
        keys = np.sort(np.repeat(np.arange(len(batch)), n_rel) * n_items + rel.indices)
        query = np.arange(len(batch))[:, None] * n_items + top
        pos = np.minimum(np.searchsorted(keys, query), max(len(keys) - 1, 0))
        hits = keys[pos] == query if len(keys) else np.zeros(top.shape, dtype=bool)
        for n in N_list:
            h = hits[:, :n]
            recall[n][lo:lo + len(batch)] = h.sum(axis=1) / n_rel
            dcg = (h * disc[:h.shape[1]]).sum(axis=1)
            ndcg[n][lo:lo + len(batch)] = dcg / idcg_table[np.minimum(n, n_rel)]

    metrics = {}
    per_user = {"users": users}
    for n in N_list:
        metrics[f"recall@{n}"] = float(recall[n].mean()) if len(users) else 0.0
        metrics[f"ndcg@{n}"] = float(ndcg[n].mean()) if len(users) else 0.0
        per_user[f"recall@{n}"] = recall[n]
        per_user[f"ndcg@{n}"] = ndcg[n]
    return EvalReport(split, metrics, len(users), ds.num_users - len(users), per_user)


# ---------------------------------------------------------------------------
# behavior uncertainty


@dataclass
class UncertaintyReport:
    source: str
    num_clusters: int
    mean_entropy: float
    user_entropy: np.ndarray = field(repr=False)
    log_base: str = "e"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["user_entropy"] = self.user_entropy.tolist()
        return d


def user_entropy(labels: np.ndarray, ds: InteractionDataset, num_clusters: int | None = None) -> np.ndarray:
    """Shannon entropy (nats) of each user's train items over cluster labels."""
    labels = np.asarray(labels)
    C = int(num_clusters if num_clusters is not None else labels.max() + 1)
    r = ds.train_matrix
    out = np.zeros(ds.num_users)
    for u in range(ds.num_users):
        items = r.indices[r.indptr[u]:r.indptr[u + 1]]
        if len(items) == 0:
            continue
        p = np.bincount(labels[items], minlength=C) / len(items)
        p = p[p > 0]
        out[u] = float(-(p * np.log(p)).sum())
    return out


def behavior_uncertainty(
    matrix: np.ndarray,
    ds: InteractionDataset,
    C: int,
    seed: int = 0,
    source: str = "features",
) -> UncertaintyReport:
    """Cluster L2-normalized item rows with k-means, then average per-user entropy."""
    if C < 2:
        raise ValueError("need at least two clusters")
    x = np.asarray(matrix, dtype=np.float64)
    if x.shape[0] != ds.num_items:
        raise ValueError(f"matrix has {x.shape[0]} rows, dataset has {ds.num_items} items")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    x = x / np.where(norms == 0, 1.0, norms)
    labels = kmeans(x, C, seed=seed).assignments
    h = user_entropy(labels, ds, C)
    return UncertaintyReport(source, C, float(h.mean()), h)


def gaussian_source(num_items: int, dim: int, seed: int = 0) -> np.ndarray:
    """Standard-normal noise features, the no-information control."""
    return np.random.default_rng(seed).standard_normal((num_items, dim))


def write_uncertainty_csv(reports: Sequence[UncertaintyReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# entropy in nats (natural log)\n")
        w = csv.writer(fh)
        w.writerow(["source", "clusters", "mean_entropy", "max_entropy"])
        for rep in reports:
            w.writerow([rep.source, rep.num_clusters, f"{rep.mean_entropy:.6f}", f"{math.log(rep.num_clusters):.6f}"])
