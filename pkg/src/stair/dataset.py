"""Interaction data, k-core filtering, per-user splits and FMAT feature files."""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

FMAT_MAGIC = b"FMAT"


class DatasetError(ValueError):
    """Raised for malformed or degenerate input data."""


def _as_pairs(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return arr.reshape(-1, 2)


@dataclass(eq=False)
class InteractionDataset:
    """User/item universe with disjoint train, valid and test pair sets.

    Users occupy dense indices ``[0, num_users)`` and items ``[0, num_items)``.
    ``user_ids`` / ``item_ids`` map dense indices back to the raw identifiers.
    """

    num_users: int
    num_items: int
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    user_ids: list | None = None
    item_ids: list | None = None

    def __post_init__(self):
        self.train = _as_pairs(self.train)
        self.valid = _as_pairs(self.valid)
        self.test = _as_pairs(self.test)

    @property
    def num_interactions(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    @property
    def sparsity(self) -> float:
        return 1.0 - self.num_interactions / (self.num_users * self.num_items)

    def split_matrix(self, split: str) -> sp.csr_matrix:
        pairs = {"train": self.train, "valid": self.valid, "test": self.test}[split]
        data = np.ones(len(pairs), dtype=np.float64)
        mat = sp.csr_matrix(
            (data, (pairs[:, 0], pairs[:, 1])), shape=(self.num_users, self.num_items)
        )
        mat.sum_duplicates()
        mat.sort_indices()
        return mat

    @cached_property
    def train_matrix(self) -> sp.csr_matrix:
        return self.split_matrix("train")

    @property
    def user_adjacency(self) -> list[np.ndarray]:
        """Sorted train item indices N_u for every user."""
        m = self.train_matrix
        return [m.indices[m.indptr[u]:m.indptr[u + 1]] for u in range(self.num_users)]

    def validate(self) -> None:
        for name in ("train", "valid", "test"):
            pairs = getattr(self, name)
            if len(pairs) == 0:
                continue
            if pairs.min() < 0 or pairs[:, 0].max() >= self.num_users or pairs[:, 1].max() >= self.num_items:
                raise DatasetError(f"{name} split has indices outside the user/item universe")
        keys = [set(map(tuple, getattr(self, n).tolist())) for n in ("train", "valid", "test")]
        if keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2]:
            raise DatasetError("train/valid/test splits overlap")
        m = self.train_matrix
        if np.any(np.diff(m.indptr) == 0):
            raise DatasetError("some users have no train interaction")
        if np.any(np.bincount(m.indices, minlength=self.num_items) == 0):
            raise DatasetError("some items have no train interaction")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<QQ", self.num_users, self.num_items))
        for pairs in (self.train, self.valid, self.test):
            h.update(struct.pack("<Q", len(pairs)))
            h.update(np.ascontiguousarray(pairs, dtype="<i8").tobytes())
        return h.hexdigest()

    def stats_line(self) -> str:
        return (
            f"{self.num_users:,} users, {self.num_items:,} items, "
            f"{self.num_interactions:,} interactions, {100 * self.sparsity:.2f}% sparsity"
        )

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            num_users=self.num_users,
            num_items=self.num_items,
            train=self.train,
            valid=self.valid,
            test=self.test,
            user_ids=np.asarray([str(x) for x in (self.user_ids or [])]),
            item_ids=np.asarray([str(x) for x in (self.item_ids or [])]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "InteractionDataset":
        with np.load(path, allow_pickle=False) as z:
            return cls(
                num_users=int(z["num_users"]),
                num_items=int(z["num_items"]),
                train=z["train"],
                valid=z["valid"],
                test=z["test"],
                user_ids=z["user_ids"].tolist() or None,
                item_ids=z["item_ids"].tolist() or None,
            )


# ---------------------------------------------------------------------------
# loading and k-core filtering


def read_interaction_pairs(path: str | Path) -> list[tuple[str, str]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DatasetError(f"{path}:{lineno}: expected 'user<TAB>item', got {line!r}")
            records.append((parts[0], parts[1]))
    return records


def k_core_filter(users: np.ndarray, items: np.ndarray, min_degree: int) -> np.ndarray:
    """Boolean mask of records surviving iterative k-core filtering.

    Users and items are removed while their degree is below ``min_degree``;
    sweeps repeat until nothing changes.
    """
    keep = np.ones(len(users), dtype=bool)
    if min_degree <= 1:
        return keep
    while True:
        u_deg = np.bincount(users[keep], minlength=users.max(initial=-1) + 1)
        i_deg = np.bincount(items[keep], minlength=items.max(initial=-1) + 1)
        bad = keep & ((u_deg[users] < min_degree) | (i_deg[items] < min_degree))
        if not bad.any():
            return keep
        keep &= ~bad


def from_pairs(records: Sequence[tuple], min_degree: int = 5) -> InteractionDataset:
    """Index raw (user, item) records; the result holds everything in ``train``.

    Duplicate pairs are dropped (first occurrence kept). Dense ids follow
    first appearance among the records that survive filtering.
    """
    seen = set()
    uniq = []
    for rec in records:
        if rec not in seen:
            seen.add(rec)
            uniq.append(rec)
    _, u_raw = np.unique([r[0] for r in uniq], return_inverse=True) if uniq else (None, np.zeros(0, int))
    _, i_raw = np.unique([r[1] for r in uniq], return_inverse=True) if uniq else (None, np.zeros(0, int))
    keep = k_core_filter(np.asarray(u_raw), np.asarray(i_raw), min_degree)
    kept = [rec for rec, k in zip(uniq, keep) if k]
    if not kept:
        raise DatasetError("dataset degenerate: no interactions survive filtering")

    user_index: dict = {}
    item_index: dict = {}
    pairs = np.empty((len(kept), 2), dtype=np.int64)
    for n, (u, i) in enumerate(kept):
        pairs[n, 0] = user_index.setdefault(u, len(user_index))
        pairs[n, 1] = item_index.setdefault(i, len(item_index))
    return InteractionDataset(
        num_users=len(user_index),
        num_items=len(item_index),
        train=pairs,
        user_ids=list(user_index),
        item_ids=list(item_index),
    )


def load_interactions(path: str | Path, min_degree: int = 5) -> InteractionDataset:
    """Read a ``user<TAB>item`` file and apply k-core filtering."""
    ds = from_pairs(read_interaction_pairs(path), min_degree)
    logger.info("loaded %s: %s", path, ds.stats_line())
    return ds


def save_interactions(ds: InteractionDataset, path: str | Path, split: str = "train") -> None:
    pairs = getattr(ds, split)
    uid = ds.user_ids or list(range(ds.num_users))
    iid = ds.item_ids or list(range(ds.num_items))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# user\titem\n")
        for u, i in pairs:
            fh.write(f"{uid[u]}\t{iid[i]}\n")


# ---------------------------------------------------------------------------
# splitting


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Split sizes for ``n`` interactions: floor each share, then hand the
    leftover units to the largest fractional parts. Ties go to test, then
    valid, then train. ``n=5`` at 8:1:1 gives (4, 0, 1)."""
    raw = [n * r for r in ratios]
    counts = [int(np.floor(x + 1e-9)) for x in raw]
    rest = n - sum(counts)
    frac = [x - c for x, c in zip(raw, counts)]
    order = sorted(range(3), key=lambda k: (-round(frac[k], 9), -k))
    for k in order[:rest]:
        counts[k] += 1
    return counts[0], counts[1], counts[2]


def split_interactions(
    ds: InteractionDataset,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> InteractionDataset:
    """Per-user random train/valid/test split.

    Users with fewer than three interactions keep everything in train. Any
    item left without a train occurrence gets its held-out interactions moved
    back to train.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DatasetError(f"split ratios must be three non-negative fractions summing to 1, got {ratios}")
    pairs = np.concatenate([ds.train, ds.valid, ds.test])
    rng = np.random.default_rng(seed)

    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    bounds = np.searchsorted(pairs[:, 0], np.arange(ds.num_users + 1))
    part = np.zeros(len(pairs), dtype=np.int8)
    for u in range(ds.num_users):
        lo, hi = bounds[u], bounds[u + 1]
        n = hi - lo
        if n < 3:
            continue
        n_tr, n_va, _ = split_counts(n, ratios)
        perm = lo + rng.permutation(n)
        part[perm[n_tr:n_tr + n_va]] = 1
        part[perm[n_tr + n_va:]] = 2

    in_train = np.bincount(pairs[part == 0, 1], minlength=ds.num_items)
    cold = in_train[pairs[:, 1]] == 0
    if cold.any():
        logger.info("moving %d held-out interactions of %d cold items back to train",
                    int(cold.sum()), len(np.unique(pairs[cold, 1])))
        part[cold] = 0

    return InteractionDataset(
        num_users=ds.num_users,
        num_items=ds.num_items,
        train=pairs[part == 0],
        valid=pairs[part == 1],
        test=pairs[part == 2],
        user_ids=ds.user_ids,
        item_ids=ds.item_ids,
    )


# ---------------------------------------------------------------------------
# modality features


@dataclass(eq=False)
class ModalityFeatures:
    modality_id: str
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix)
        if self.matrix.ndim != 2:
            raise DatasetError(f"{self.modality_id}: feature matrix must be 2-D")
        bad = ~np.isfinite(self.matrix)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DatasetError(f"{self.modality_id}: non-finite feature at row {r}, col {c}")

    @property
    def num_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def write_fmat(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(matrix.tobytes())


def read_fmat(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FMAT_MAGIC:
        raise DatasetError(f"{path}: not an FMAT file (bad magic {raw[:4]!r})")
    if len(raw) < 12:
        raise DatasetError(f"{path}: truncated FMAT header")
    rows, cols = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * rows * cols
    if len(raw) != expected:
        raise DatasetError(f"{path}: FMAT header says {rows}x{cols} ({expected} bytes) but file has {len(raw)} bytes")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float32)


def load_features(path: str | Path, expected_items: int, modality_id: str | None = None) -> ModalityFeatures:
    matrix = read_fmat(path)
    if matrix.shape[0] != expected_items:
        raise DatasetError(
            f"{path}: feature file has {matrix.shape[0]} rows but the dataset has {expected_items} items"
        )
    return ModalityFeatures(modality_id or Path(path).stem, matrix)
