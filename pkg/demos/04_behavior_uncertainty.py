"""Entropy of user behavior over feature clusters.

Items are clustered by each feature source; a user whose items all fall in a
few clusters has low entropy. Features that explain behavior give lower mean
entropy than random noise. Run: python3 demos/04_behavior_uncertainty.py
"""

import numpy as np

from stair.evaluation import behavior_uncertainty, gaussian_source
from stair.synthetic import make_synthetic

syn = make_synthetic(cluster_weight=2.0, revealed_latent=0, seed=0)
ds = syn.dataset

sources = {f.modality_id: f.matrix for f in syn.features}
sources["random"] = gaussian_source(ds.num_items, 64, seed=0)
sources["true clusters"] = np.eye(syn.item_clusters.max() + 1)[syn.item_clusters]

for C in (10, 20):
    print(f"C={C} (max entropy ln C = {np.log(C):.3f} nats)")
    for name, matrix in sources.items():
        rep = behavior_uncertainty(matrix, ds, C, seed=0, source=name)
        print(f"  {name:14s} {rep.mean_entropy:.3f}")
