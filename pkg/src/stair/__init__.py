"""Multimodal recommendation with stepwise graph convolution in numpy/scipy.

Item embeddings start from whitened modality features. A per-dimension layer
schedule lets early dimensions absorb collaborative smoothing while late
dimensions keep the modality signal (forward stepwise convolution), and item
updates are smoothed over a modality kNN graph (backward stepwise convolution).
"""

__version__ = "0.1.0"

from .dataset import (
    DatasetError,
    InteractionDataset,
    ModalityFeatures,
    load_features,
    load_interactions,
    split_interactions,
)
from .evaluation import EvalReport, UncertaintyReport, behavior_uncertainty, rank_and_score
from .graphs import build_bipartite_graph, build_modality_graph, knn_neighbors
from .init import EmbeddingTable, kmeans, meanpool_user_init, whiten_init
from .stepwise import (
    StepwiseSchedule,
    backprop_through_fsc,
    build_schedule,
    forward_stepwise_convolution,
    modality_correlation_diagnostic,
    uniform_schedule,
)
from .training import TrainConfig, Trainer, TrainResult, load_checkpoint, preset, save_checkpoint, train

__all__ = [
    "DatasetError",
    "EmbeddingTable",
    "EvalReport",
    "InteractionDataset",
    "ModalityFeatures",
    "StepwiseSchedule",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "UncertaintyReport",
    "backprop_through_fsc",
    "behavior_uncertainty",
    "build_bipartite_graph",
    "build_modality_graph",
    "build_schedule",
    "forward_stepwise_convolution",
    "kmeans",
    "knn_neighbors",
    "load_checkpoint",
    "load_features",
    "load_interactions",
    "meanpool_user_init",
    "modality_correlation_diagnostic",
    "preset",
    "rank_and_score",
    "save_checkpoint",
    "split_interactions",
    "train",
    "uniform_schedule",
    "whiten_init",
]
