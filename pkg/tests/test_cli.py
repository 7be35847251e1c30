import json

import numpy as np
import pytest

from stair.cli import main
from stair.config import ConfigError, load_config, parse_config
from stair.dataset import InteractionDataset, read_fmat, write_fmat
from stair.synthetic import make_synthetic


@pytest.fixture(scope="module")
def raw_inputs(tmp_path_factory):
    """Raw-id interaction file plus FMAT features listed in a shuffled item order."""
    root = tmp_path_factory.mktemp("raw")
    syn = make_synthetic(num_users=80, num_items=40, num_clusters=4, text_dim=6, visual_dim=8, seed=5)
    ds = syn.dataset
    pairs = np.concatenate([ds.train, ds.valid, ds.test])
    with open(root / "interactions.tsv", "w") as fh:
        fh.write("# user\titem\n")
        for u, i in pairs:
            fh.write(f"user{u}\titem{i}\n")
    order = np.random.default_rng(0).permutation(ds.num_items)
    for f in syn.features:
        write_fmat(root / f"{f.modality_id}.fmat", f.matrix[order])
    (root / "items.txt").write_text("\n".join(f"item{i}" for i in order) + "\n")
    return root, syn


def _config(root, tmp_path, **extra):
    doc = {
        "interactions": str(root / "interactions.tsv"),
        "features": {"textual": str(root / "textual.fmat"), "visual": str(root / "visual.fmat")},
        "feature_item_ids": {"textual": str(root / "items.txt"), "visual": str(root / "items.txt")},
        "min_degree": 1,
        "output_dir": str(tmp_path / "out"),
        "dim": 8, "layers": 2, "gamma": 1.0, "lr": 5e-3, "batch_size": 128, "epochs": 2,
        "knn_k": {"textual": 3, "visual": 1},
        **extra,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="lerning_rate"):
        parse_config({"lerning_rate": 0.1})


def test_config_type_and_range_checks():
    with pytest.raises(ConfigError, match="dim"):
        parse_config({"dim": "64"})
    with pytest.raises(ConfigError, match="gamma"):
        parse_config({"gamma": 0})
    with pytest.raises(ConfigError, match="split_ratios"):
        parse_config({"split_ratios": [0.5, 0.5, 0.5]})
    with pytest.raises(ConfigError, match="bool"):
        parse_config({"epochs": True})


def test_config_defaults_and_preset(tmp_path):
    cfg = parse_config({})
    assert (cfg.train.lr, cfg.train.weight_decay, cfg.train.gamma, cfg.train.epochs) == (1e-3, 0.3, 0.1, 500)
    assert cfg.train.knn_k == {"textual": 5, "visual": 1}
    assert parse_config({"preset": "electronics"}).train.batch_size == 4096
    assert parse_config({"preset": "sports", "gamma": 0.5}).train.gamma == 0.5
    (tmp_path / "c.json").write_text('{"interactions": "x.tsv"}')
    assert load_config(tmp_path / "c.json").interactions == tmp_path / "x.tsv"


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"dimension": 3}')
    assert main(["prepare", "--config", str(tmp_path / "c.json")]) == 2
    assert "dimension" in capsys.readouterr().err


def test_missing_feature_file_exit_two(raw_inputs, tmp_path, capsys):
    root, _ = raw_inputs
    cfg = _config(root, tmp_path, features={"textual": str(root / "nope.fmat")}, feature_item_ids={})
    assert main(["prepare", "--config", str(cfg)]) == 2
    assert "nope.fmat" in capsys.readouterr().err


def test_end_to_end(raw_inputs, tmp_path, capsys):
    root, syn = raw_inputs
    cfg = _config(root, tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "users" in out and "sparsity" in out and "cache hit" not in out
    prep = tmp_path / "out" / "prepared"
    spgr = sorted(prep.glob("similarity-*.spgr"))
    assert len(spgr) == 1
    stamp = spgr[0].stat().st_mtime_ns

    assert main(["prepare", "--config", str(cfg)]) == 0
    assert "cache hit" in capsys.readouterr().out
    assert spgr[0].stat().st_mtime_ns == stamp

    # realigned features follow the dense item order of the prepared dataset
    ds = InteractionDataset.load(prep / "dataset.npz")
    dense = [int(i[4:]) for i in ds.item_ids]
    text = next(f for f in syn.features if f.modality_id == "textual").matrix
    np.testing.assert_allclose(read_fmat(prep / "textual.fmat"), text[dense].astype(np.float32))

    assert main(["train", "--config", str(cfg), "--seed", "1"]) == 0
    assert "best epoch" in capsys.readouterr().out
    ckpt = tmp_path / "out" / "stair-seed1" / "checkpoint.npz"
    lines = (tmp_path / "out" / "stair-seed1" / "metrics.csv").read_text().splitlines()
    assert len(lines) == 3

    assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ckpt)]) == 0
    first = capsys.readouterr().out
    assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ckpt)]) == 0
    assert capsys.readouterr().out == first
    test_recall = json.loads(first)["metrics"]["recall@20"]

    assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ckpt), "--split", "train",
                 "--no-mask-train"]) == 0
    sanity = json.loads(capsys.readouterr().out)["metrics"]["recall@20"]
    assert sanity > test_recall

    assert main(["train", "--config", str(cfg), "--baseline", "mf-bpr"]) == 0
    assert (tmp_path / "out" / "mf-bpr-seed0" / "checkpoint.npz").exists()
    assert main(["train", "--config", str(cfg), "--ablate", "fsc", "--ablate", "mi"]) == 0
    assert (tmp_path / "out" / "stair-no-fsc-no-mi-seed0" / "config.json").exists()
    cfg_doc = json.loads((tmp_path / "out" / "stair-no-fsc-no-mi-seed0" / "config.json").read_text())
    assert cfg_doc["fsc"] is False and cfg_doc["modality_init"] is False
    capsys.readouterr()

    unc = _config(root, tmp_path, pretrained_checkpoint=str(tmp_path / "out" / "mf-bpr-seed0" / "checkpoint.npz"))
    with pytest.warns(UserWarning, match="'audio'"):
        code = main(["analyze-uncertainty", "--config", str(unc), "--sources", "pretrained", "textual",
                     "random", "audio"])
    assert code == 0
    assert "skipped audio" in capsys.readouterr().out
    for C in (10, 20):
        rows = (tmp_path / "out" / "uncertainty" / f"entropy_c{C}.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows[2:]] == ["pretrained", "textual", "random"]
        per_user = np.loadtxt(tmp_path / "out" / "uncertainty" / f"entropy_textual_c{C}.csv")
        assert len(per_user) == ds.num_users
        assert per_user.min() >= 0 and per_user.max() <= np.log(C) + 1e-6


def test_evaluate_refuses_other_dataset(raw_inputs, tmp_path, capsys):
    root, _ = raw_inputs
    cfg = _config(root, tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg), "--ablate", "bsc", "--epochs", "1"]) == 0
    ckpt = tmp_path / "out" / "stair-no-bsc-seed0" / "checkpoint.npz"
    other = _config(root, tmp_path, split_seed=9, output_dir=str(tmp_path / "other"))
    assert main(["prepare", "--config", str(other)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--config", str(other), "--checkpoint", str(ckpt)]) == 2
    assert "trained on dataset" in capsys.readouterr().err


def test_empty_sources_noop(raw_inputs, tmp_path, capsys):
    root, _ = raw_inputs
    cfg = _config(root, tmp_path, uncertainty_sources=[])
    with pytest.warns(UserWarning, match="no uncertainty sources"):
        assert main(["analyze-uncertainty", "--config", str(cfg)]) == 0
    assert not (tmp_path / "out" / "uncertainty").exists()


def test_train_without_prepare(raw_inputs, tmp_path, capsys):
    root, _ = raw_inputs
    assert main(["train", "--config", str(_config(root, tmp_path))]) == 2
    assert "prepare" in capsys.readouterr().err
