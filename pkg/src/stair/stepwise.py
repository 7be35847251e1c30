"""Per-dimension layer-weight schedules and stepwise graph convolution."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graphs import is_identity, propagate


@dataclass(frozen=True, eq=False)
class StepwiseSchedule:
    """Layer weights ``alpha`` (d x (L+1)) built from teleport ratios ``beta``."""

    beta: np.ndarray
    alpha: np.ndarray
    gamma: float
    direction: str

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]

    @property
    def layers(self) -> int:
        return self.alpha.shape[1] - 1

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dim", "beta"] + [f"layer{l}" for l in range(self.layers + 1)])
            for j, (b, row) in enumerate(zip(self.beta, self.alpha), start=1):
                w.writerow([j, repr(float(b))] + [repr(float(a)) for a in row])


def layer_weights(beta: np.ndarray, L: int) -> np.ndarray:
    """alpha_jl = (1 - b_j) / (1 - b_j^(L+1)) * b_j^l, rows sum to one.

    ``b_j = 0`` gives all weight to layer 0.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta < 0) or np.any(beta >= 1):
        raise ValueError("teleport ratios must lie in [0, 1)")
    powers = beta[:, None] ** np.arange(L + 1)[None, :]
    return (1.0 - beta)[:, None] / (1.0 - beta ** (L + 1))[:, None] * powers


def teleport_ratios(d: int, gamma: float, scale: float = 0.9) -> np.ndarray:
    """b_j = scale * (1 - ((j-1)/d)^gamma) for j = 1..d."""
    j = np.arange(1, d + 1, dtype=np.float64)
    return scale * (1.0 - ((j - 1.0) / d) ** gamma)


def build_schedule(d: int, L: int, gamma: float, direction: str = "forward", scale: float = 0.9) -> StepwiseSchedule:
    if d < 1 or L < 0:
        raise ValueError(f"need d >= 1 and L >= 0, got d={d}, L={L}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    beta = teleport_ratios(d, gamma, scale)
    if direction == "backward":
        beta = 1.0 - beta
    elif direction != "forward":
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    return StepwiseSchedule(beta, layer_weights(beta, L), gamma, direction)


def uniform_schedule(d: int, L: int, direction: str = "forward") -> StepwiseSchedule:
    """Equal weights 1/(L+1) on every layer: plain LightGCN (MF when L = 0)."""
    alpha = np.full((d, L + 1), 1.0 / (L + 1))
    return StepwiseSchedule(np.full(d, np.nan), alpha, float("nan"), direction)


def identity_schedule(d: int, direction: str = "backward") -> StepwiseSchedule:
    return StepwiseSchedule(np.zeros(d), np.ones((d, 1)), float("nan"), direction)


def stepwise_convolution(graph: sp.spmatrix, E: np.ndarray, schedule: StepwiseSchedule) -> np.ndarray:
    """H[:, j] = sum_l alpha[j, l] * graph^l @ E[:, j], one sparse product per layer."""
    if E.shape[1] != schedule.dim:
        raise ValueError(f"embedding has {E.shape[1]} columns but schedule has d={schedule.dim}")
    if graph.shape[0] != E.shape[0]:
        raise ValueError(f"graph dimension {graph.shape[0]} does not match {E.shape[0]} embedding rows")
    alpha = schedule.alpha
    L = schedule.layers
    if L == 0 or is_identity(graph):
        # every row of alpha sums to one, so the weighted sum is E itself
        return np.array(E, dtype=np.float64, copy=True)
    P = np.asarray(E, dtype=np.float64)
    H = P * alpha[:, 0]
    for l in range(1, L + 1):
        P = propagate(graph, P)
        H += P * alpha[:, l]
    return H


forward_stepwise_convolution = stepwise_convolution


def backprop_through_fsc(grad_H: np.ndarray, graph: sp.spmatrix, schedule: StepwiseSchedule) -> np.ndarray:
    """Gradient w.r.t. E of the stepwise convolution.

    The map is linear in E and the graph is symmetric, so the Jacobian
    transpose is the same convolution.
    """
    return stepwise_convolution(graph, grad_H, schedule)


def modality_correlation_diagnostic(E_items: np.ndarray, E_init: np.ndarray) -> float:
    """Mean over dimensions of |Pearson r| between trained and initial item columns."""
    a = np.asarray(E_items, dtype=np.float64)
    b = np.asarray(E_init, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    sa = np.sqrt((a * a).sum(axis=0))
    sb = np.sqrt((b * b).sum(axis=0))
    ok = (sa > 0) & (sb > 0)
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} zero-variance dimensions contribute 0 correlation", stacklevel=2)
    r = np.zeros(a.shape[1])
    r[ok] = (a[:, ok] * b[:, ok]).sum(axis=0) / (sa[ok] * sb[ok])
    return float(np.mean(np.abs(r)))
