"""The command-line workflow end to end on files written to a temp directory.

Equivalent shell session::

    stair prepare  --config run.json
    stair train    --config run.json --seed 1
    stair train    --config run.json --baseline lightgcn
    stair evaluate --config run.json --checkpoint out/stair-seed1/checkpoint.npz --format text
    stair analyze-uncertainty --config run.json --sources textual visual random

Run: python3 demos/05_cli_workflow.py
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from stair.cli import main
from stair.dataset import write_fmat
from stair.synthetic import make_synthetic

root = Path(tempfile.mkdtemp(prefix="stair-demo-"))
syn = make_synthetic(num_users=400, num_items=150, seed=2)
ds = syn.dataset

# raw files: a TSV of (user, item) ids and one FMAT per modality
pairs = np.concatenate([ds.train, ds.valid, ds.test])
with open(root / "interactions.tsv", "w") as fh:
    fh.write("# user\titem\n")
    fh.writelines(f"u{u}\ti{i}\n" for u, i in pairs)
for f in syn.features:
    write_fmat(root / f"{f.modality_id}.fmat", f.matrix)
(root / "items.txt").write_text("".join(f"i{i}\n" for i in range(ds.num_items)))

config = {
    "interactions": "interactions.tsv",
    "features": {"textual": "textual.fmat", "visual": "visual.fmat"},
    "feature_item_ids": {"textual": "items.txt", "visual": "items.txt"},
    "output_dir": "out",
    "dim": 32, "gamma": 1.0, "lr": 5e-3, "weight_decay": 1.0, "epochs": 10,
}
(root / "run.json").write_text(json.dumps(config, indent=2))
cfg = str(root / "run.json")

main(["prepare", "--config", cfg])
main(["prepare", "--config", cfg])  # second run is a cache hit
main(["train", "--config", cfg, "--seed", "1"])
main(["train", "--config", cfg, "--baseline", "lightgcn"])
main(["evaluate", "--config", cfg, "--checkpoint", str(root / "out/stair-seed1/checkpoint.npz"), "--format", "text"])
main(["analyze-uncertainty", "--config", cfg, "--sources", "textual", "visual", "random"])
print("artifacts in", root)
