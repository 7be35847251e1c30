"""BPR training with AdamW directions and the similarity-constrained item update."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from . import _random
from .dataset import InteractionDataset, ModalityFeatures
from .evaluation import EvalReport, rank_and_score
from .graphs import build_bipartite_graph, build_modality_graph
from .init import EmbeddingTable, meanpool_user_init, random_init, whiten_init
from .stepwise import (
    StepwiseSchedule,
    backprop_through_fsc,
    build_schedule,
    modality_correlation_diagnostic,
    stepwise_convolution,
    uniform_schedule,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    dim: int = 64
    layers: int = 3
    gamma: float = 0.1
    beta_scale: float = 0.9
    knn_k: dict = field(default_factory=lambda: {"textual": 5, "visual": 1})
    lr: float = 1e-3
    weight_decay: float = 0.3
    adam_betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 1024
    epochs: int = 500
    seed: int = 0
    modality_init: bool = True
    fsc: bool = True
    bsc: bool = True
    init_std: float = 0.01
    whiten_strategy: str = "concat-then-whiten"
    whiten_scale: str = "unit-norm"
    eval_every: int = 1

    def to_json(self) -> str:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return json.dumps(d, sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def forward_schedule(self) -> StepwiseSchedule:
        if not self.fsc:
            return uniform_schedule(self.dim, self.layers, "forward")
        return build_schedule(self.dim, self.layers, self.gamma, "forward", self.beta_scale)

    def backward_schedule(self) -> StepwiseSchedule:
        return build_schedule(self.dim, self.layers, self.gamma, "backward", self.beta_scale)

    def ablate(self, *parts: str) -> "TrainConfig":
        """Copy with components switched off: ``mi``, ``fsc`` and/or ``bsc``."""
        flags = {"mi": "modality_init", "fsc": "fsc", "bsc": "bsc"}
        unknown = set(parts) - set(flags)
        if unknown:
            raise ValueError(f"unknown ablation {sorted(unknown)}; choose from {sorted(flags)}")
        return replace(self, **{flags[p]: False for p in parts})

    def baseline(self, name: str) -> "TrainConfig":
        """LightGCN: uniform layers, random init, no BSC. MF-BPR: the same with zero layers."""
        if name == "lightgcn":
            return self.ablate("mi", "fsc", "bsc")
        if name == "mf-bpr":
            return replace(self.ablate("mi", "fsc", "bsc"), layers=0)
        raise ValueError(f"unknown baseline {name!r}")


# per-dataset hyperparameters from the published configuration table
PRESETS = {
    "baby": dict(weight_decay=0.3, gamma=0.1, batch_size=1024),
    "sports": dict(weight_decay=0.1, gamma=0.2, batch_size=1024),
    "electronics": dict(weight_decay=0.1, gamma=0.4, batch_size=4096),
}


def preset(name: str, **overrides) -> TrainConfig:
    return TrainConfig(**{**PRESETS[name.lower()], **overrides})


# ---------------------------------------------------------------------------
# sampling


@dataclass
class TrainingBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


class NegativeSampler:
    """Uniform negatives by rejection against the train interactions."""

    def __init__(self, ds: InteractionDataset):
        self.num_items = ds.num_items
        r = ds.train_matrix
        self._keys = np.sort(np.repeat(np.arange(ds.num_users), np.diff(r.indptr)) * ds.num_items + r.indices)
        self._full = np.diff(r.indptr) >= ds.num_items

    def is_positive(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        keys = users.astype(np.int64) * self.num_items + items
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys

    def sample(self, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        neg = rng.integers(self.num_items, size=len(users))
        bad = self.is_positive(users, neg)
        while bad.any():
            neg[bad] = rng.integers(self.num_items, size=int(bad.sum()))
            bad[bad] = self.is_positive(users[bad], neg[bad])
        return neg

    def drop_saturated(self, users: np.ndarray) -> np.ndarray:
        """Mask of users that still have at least one non-interacted item."""
        ok = ~self._full[users]
        if not ok.all():
            warnings.warn(f"skipping {int((~ok).sum())} triples of users who interacted with every item",
                          stacklevel=3)
        return ok


def sample_batch(ds: InteractionDataset, batch_size: int, rng: np.random.Generator,
                 sampler: NegativeSampler | None = None) -> TrainingBatch:
    """``batch_size`` triples with positives drawn uniformly from train pairs."""
    if len(ds.train) == 0:
        raise ValueError("train set is empty")
    sampler = sampler or NegativeSampler(ds)
    pairs = ds.train[rng.integers(len(ds.train), size=batch_size)]
    pairs = pairs[sampler.drop_saturated(pairs[:, 0])]
    return TrainingBatch(pairs[:, 0], pairs[:, 1], sampler.sample(pairs[:, 0], rng))


def epoch_batches(ds: InteractionDataset, batch_size: int, rng: np.random.Generator,
                  sampler: NegativeSampler | None = None) -> Iterator[TrainingBatch]:
    """Every train pair once, shuffled, each with a fresh negative."""
    sampler = sampler or NegativeSampler(ds)
    pairs = ds.train[rng.permutation(len(ds.train))]
    pairs = pairs[sampler.drop_saturated(pairs[:, 0])]
    negs = sampler.sample(pairs[:, 0], rng)
    for lo in range(0, len(pairs), batch_size):
        sl = slice(lo, lo + batch_size)
        yield TrainingBatch(pairs[sl, 0], pairs[sl, 1], negs[sl])


# ---------------------------------------------------------------------------
# loss and gradients


def bpr_loss_and_grad(H: np.ndarray, batch: TrainingBatch, num_users: int) -> tuple[float, np.ndarray]:
    """Mean of -log sigmoid(h_u.h_i - h_u.h_j) over the batch and its gradient w.r.t. H.

    ``H`` stacks users first, then items.
    """
    u = batch.users
    i = batch.pos_items + num_users
    j = batch.neg_items + num_users
    hu, hi, hj = H[u], H[i], H[j]
    margin = np.einsum("bd,bd->b", hu, hi - hj)
    n = len(batch)
    loss = float(np.logaddexp(0.0, -margin).sum() / n)
    # d loss / d margin = -sigmoid(-margin) / n
    coef = -np.exp(-np.logaddexp(0.0, margin)) / n
    grad = np.zeros_like(H, dtype=np.float64)
    np.add.at(grad, u, coef[:, None] * (hi - hj))
    np.add.at(grad, i, coef[:, None] * hu)
    np.add.at(grad, j, -coef[:, None] * hu)
    return loss, grad


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float, weight_decay: float,
                   betas: Sequence[float] = (0.9, 0.999), eps: float = 1e-8) -> "OptimizerState":
        return cls(lr, weight_decay, betas[0], betas[1], eps,
                   m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
                   v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()})


def adamw_direction(state: OptimizerState, grads: dict) -> dict:
    """Bias-corrected m̂ / (sqrt(v̂) + eps) per parameter; advances ``state.t`` by one.

    Weight decay is not part of the direction.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    out = {}
    for k, g in grads.items():
        if state.m[k].shape != g.shape:
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, state has {state.m[k].shape}")
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        out[k] = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


def decoupled_update(param: np.ndarray, direction: np.ndarray, lr: float, weight_decay: float) -> np.ndarray:
    """p - lr * direction - lr * weight_decay * p, in place."""
    step = lr * direction
    if weight_decay:
        step += (lr * weight_decay) * param
    param -= step
    return param


def bsc_direction(direction: np.ndarray, similarity: sp.spmatrix, schedule: StepwiseSchedule) -> np.ndarray:
    if schedule.direction != "backward":
        raise ValueError("BSC needs a backward schedule")
    return stepwise_convolution(similarity, direction, schedule)


def bsc_update(E_items: np.ndarray, direction: np.ndarray, similarity: sp.spmatrix,
               schedule: StepwiseSchedule, lr: float, weight_decay: float) -> np.ndarray:
    """Item update along the similarity-smoothed AdamW direction (in place)."""
    return decoupled_update(E_items, bsc_direction(direction, similarity, schedule), lr, weight_decay)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    best: EmbeddingTable
    best_epoch: int
    best_valid: EvalReport | None
    final: EmbeddingTable
    optimizer: OptimizerState
    history: list
    config: TrainConfig
    init_items: np.ndarray | None = None

    def representations(self, graph: sp.spmatrix, which: str = "best") -> tuple[np.ndarray, np.ndarray]:
        table = self.best if which == "best" else self.final
        H = stepwise_convolution(graph, table.stacked, self.config.forward_schedule())
        return H[:table.num_users], H[table.num_users:]


class Trainer:
    """Stateful runner for one configuration on one dataset.

    ``step`` performs a single forward/backward/update cycle; ``fit`` runs the
    epoch loop with validation-based checkpoint selection.
    """

    def __init__(self, config: TrainConfig, ds: InteractionDataset,
                 features: Sequence[ModalityFeatures] | None = None,
                 similarity: sp.spmatrix | None = None,
                 adjacency: sp.spmatrix | None = None):
        self.config = config
        self.ds = ds
        self.features = list(features or [])
        self.adjacency = adjacency if adjacency is not None else build_bipartite_graph(ds)
        self.fwd = config.forward_schedule()
        self.bwd = config.backward_schedule()

        self.init_items = None
        if self.features:
            self.init_items = whiten_init(self.features, config.dim, config.whiten_strategy,
                                          seed=config.seed, scale=config.whiten_scale)

        rng = _random.stream(config.seed, "init")
        if config.modality_init:
            if self.init_items is None:
                raise ValueError("modality initialization needs feature matrices")
            items = self.init_items.copy()
            users = meanpool_user_init(items, ds)
        else:
            users = random_init(ds.num_users, config.dim, rng, config.init_std)
            items = random_init(ds.num_items, config.dim, rng, config.init_std)
        self.table = EmbeddingTable(users, items)

        self.similarity = None
        if config.bsc:
            if similarity is None:
                if not self.features:
                    raise ValueError("BSC needs feature matrices or a precomputed similarity graph")
                similarity = build_modality_graph(self.features, config.knn_k)
            if similarity.shape != (ds.num_items, ds.num_items):
                raise ValueError("similarity graph does not match the item count")
            self.similarity = similarity

        self.optimizer = OptimizerState.for_params(
            {"user": users, "item": items}, config.lr, config.weight_decay, config.adam_betas, config.eps)
        self.sampler = NegativeSampler(ds)
        self.rng = _random.stream(config.seed, "sampling")

    def forward(self, table: EmbeddingTable | None = None) -> np.ndarray:
        table = table or self.table
        return stepwise_convolution(self.adjacency, table.stacked, self.fwd)

    def step(self, batch: TrainingBatch) -> float:
        cfg = self.config
        nu = self.ds.num_users
        H = self.forward()
        loss, grad_H = bpr_loss_and_grad(H, batch, nu)
        grad_E = backprop_through_fsc(grad_H, self.adjacency, self.fwd)
        dirs = adamw_direction(self.optimizer, {"user": grad_E[:nu], "item": grad_E[nu:]})
        decoupled_update(self.table.user_embeddings, dirs["user"], cfg.lr, cfg.weight_decay)
        if self.similarity is not None:
            bsc_update(self.table.item_embeddings, dirs["item"], self.similarity, self.bwd, cfg.lr, cfg.weight_decay)
        else:
            decoupled_update(self.table.item_embeddings, dirs["item"], cfg.lr, cfg.weight_decay)
        return loss

    def evaluate(self, split: str = "valid", table: EmbeddingTable | None = None,
                 N_list: Sequence[int] = (10, 20)) -> EvalReport:
        H = self.forward(table)
        nu = self.ds.num_users
        return rank_and_score(H[:nu], H[nu:], self.ds, split, N_list)

    def fit(self, epochs: int | None = None, log_path: str | Path | None = None) -> TrainResult:
        cfg = self.config
        epochs = cfg.epochs if epochs is None else epochs
        history = []
        best_score, best_epoch, best_report = -np.inf, 0, None
        best = self.table.copy()
        log = None
        if log_path is not None:
            log = open(log_path, "w", newline="")
            writer = csv.writer(log)
            writer.writerow(["epoch", "loss", "recall@10", "recall@20", "ndcg@10", "ndcg@20", "pearson"])
        try:
            for epoch in range(1, epochs + 1):
                losses = []
                for b, batch in enumerate(epoch_batches(self.ds, cfg.batch_size, self.rng, self.sampler)):
                    loss = self.step(batch)
                    if not np.isfinite(loss):
                        raise TrainingDivergedError(
                            f"non-finite loss at epoch {epoch}, batch {b}: "
                            f"|E_U|={np.linalg.norm(self.table.user_embeddings):.4g}, "
                            f"|E_I|={np.linalg.norm(self.table.item_embeddings):.4g}")
                    losses.append(loss)
                row = {"epoch": epoch, "loss": float(np.mean(losses))}
                if epoch % cfg.eval_every == 0 or epoch == epochs:
                    rep = self.evaluate("valid") if len(self.ds.valid) else None
                    if rep is not None:
                        row.update(rep.metrics)
                        if rep["ndcg@20"] > best_score:
                            best_score, best_epoch, best_report = rep["ndcg@20"], epoch, rep
                            best = self.table.copy()
                    if self.init_items is not None:
                        with warnings.catch_warnings():
                            warnings.simplefilter("ignore")
                            row["pearson"] = modality_correlation_diagnostic(
                                self.table.item_embeddings, self.init_items)
                history.append(row)
                logger.debug("epoch %d %s", epoch, row)
                if log is not None:
                    writer.writerow([row.get(k, "") for k in
                                     ("epoch", "loss", "recall@10", "recall@20", "ndcg@10", "ndcg@20", "pearson")])
                    log.flush()
        finally:
            if log is not None:
                log.close()
        if best_report is None:
            best, best_epoch = self.table.copy(), epochs
        return TrainResult(best, best_epoch, best_report, self.table.copy(), self.optimizer,
                           history, cfg, self.init_items)


def train(config: TrainConfig, ds: InteractionDataset,
          features: Sequence[ModalityFeatures] | None = None, **kwargs) -> TrainResult:
    log_path = kwargs.pop("log_path", None)
    return Trainer(config, ds, features, **kwargs).fit(log_path=log_path)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, result: TrainResult, dataset_hash: str) -> None:
    opt = result.optimizer
    np.savez(
        path,
        version=CHECKPOINT_VERSION,
        config_json=result.config.to_json(),
        config_hash=result.config.hash(),
        dataset_hash=dataset_hash,
        best_epoch=result.best_epoch,
        user_embeddings=result.best.user_embeddings,
        item_embeddings=result.best.item_embeddings,
        final_user_embeddings=result.final.user_embeddings,
        final_item_embeddings=result.final.item_embeddings,
        opt_t=opt.t,
        opt_hyper=np.array([opt.lr, opt.weight_decay, opt.beta1, opt.beta2, opt.eps]),
        opt_m_user=opt.m["user"], opt_v_user=opt.v["user"],
        opt_m_item=opt.m["item"], opt_v_item=opt.v["item"],
    )


@dataclass
class Checkpoint:
    config: TrainConfig
    dataset_hash: str
    best_epoch: int
    embeddings: EmbeddingTable
    final: EmbeddingTable
    optimizer: OptimizerState


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        cfg = json.loads(str(z["config_json"]))
        cfg["adam_betas"] = tuple(cfg["adam_betas"])
        config = TrainConfig(**cfg)
        if config.hash() != str(z["config_hash"]):
            raise ValueError(f"{path}: config hash mismatch, file is corrupt")
        lr, wd, b1, b2, eps = z["opt_hyper"].tolist()
        opt = OptimizerState(lr, wd, b1, b2, eps, int(z["opt_t"]),
                             m={"user": z["opt_m_user"], "item": z["opt_m_item"]},
                             v={"user": z["opt_v_user"], "item": z["opt_v_item"]})
        return Checkpoint(
            config, str(z["dataset_hash"]), int(z["best_epoch"]),
            EmbeddingTable(z["user_embeddings"], z["item_embeddings"]),
            EmbeddingTable(z["final_user_embeddings"], z["final_item_embeddings"]),
            opt,
        )
