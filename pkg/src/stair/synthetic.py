"""Synthetic interaction data driven partly by latent item clusters.

Items belong to hidden categories. Users mix a sparse preference over
categories with a collaborative latent factor and item popularity.
The "textual" and "visual" modality features encode each item's category
with different amounts of noise; the textual one also carries the first
``revealed_latent`` coordinates of the latent factor. Popularity and the
remaining latent coordinates are visible only through interactions, so
both features are informative but incomplete.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import InteractionDataset, ModalityFeatures, from_pairs, split_interactions


@dataclass
class SyntheticData:
    dataset: InteractionDataset
    features: list
    item_clusters: np.ndarray


def make_synthetic(
    num_users: int = 2000,
    num_items: int = 500,
    num_clusters: int = 10,
    latent_dim: int = 8,
    extra_interactions: float = 6.0,
    cluster_weight: float = 1.0,
    latent_weight: float = 1.0,
    preference_concentration: float = 0.3,
    popularity_spread: float = 0.5,
    text_dim: int = 48,
    visual_dim: int = 96,
    text_noise: float = 0.5,
    visual_noise: float = 1.5,
    revealed_latent: int = 4,
    latent_feature_weight: float = 1.0,
    min_degree: int = 5,
    split_ratios=(0.8, 0.1, 0.1),
    seed: int = 0,
) -> SyntheticData:
    rng = np.random.default_rng(seed)
    clusters = rng.integers(num_clusters, size=num_items)
    item_latent = rng.standard_normal((num_items, latent_dim))
    user_latent = rng.standard_normal((num_users, latent_dim))
    popularity = rng.normal(0.0, popularity_spread, size=num_items)
    prefs = rng.dirichlet(np.full(num_clusters, preference_concentration), size=num_users)

    scores = (
        cluster_weight * np.log(prefs[:, clusters] + 1e-6)
        + latent_weight * (user_latent @ item_latent.T) / np.sqrt(latent_dim)
        + popularity[None, :]
    )
    sizes = min_degree + rng.poisson(extra_interactions, size=num_users)
    gumbel = scores + rng.gumbel(size=scores.shape)
    order = np.argsort(-gumbel, axis=1)
    records = [(u, int(i)) for u in range(num_users) for i in order[u, :sizes[u]]]
    perm = rng.permutation(len(records))
    ds = from_pairs([records[k] for k in perm], min_degree=min_degree)
    ds = split_interactions(ds, split_ratios, seed=seed)

    raw_items = np.asarray(ds.item_ids, dtype=np.int64)
    feats = []
    for name, dim, noise, reveal in (("textual", text_dim, text_noise, revealed_latent),
                                     ("visual", visual_dim, visual_noise, 0)):
        centers = rng.standard_normal((num_clusters, dim))
        mat = centers[clusters] + noise * rng.standard_normal((num_items, dim))
        if reveal:
            mix = rng.standard_normal((reveal, dim))
            mat += latent_feature_weight * item_latent[:, :reveal] @ mix
        feats.append(ModalityFeatures(name, mat[raw_items].astype(np.float32)))
    return SyntheticData(ds, feats, clusters[raw_items])
