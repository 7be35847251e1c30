"""Command-line workflows: prepare, train, evaluate, analyze-uncertainty.

Exit codes: 0 success, 1 runtime failure, 2 input or validation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dataset import (
    DatasetError,
    InteractionDataset,
    ModalityFeatures,
    load_features,
    load_interactions,
    read_fmat,
    save_interactions,
    split_interactions,
    write_fmat,
)
from .evaluation import behavior_uncertainty, gaussian_source, rank_and_score, write_uncertainty_csv
from .graphs import GraphError, build_bipartite_graph, build_modality_graph, read_spgr, write_spgr
from .stepwise import stepwise_convolution
from .training import Checkpoint, TrainConfig, TrainingDivergedError, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("stair")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad or missing inputs; maps to exit code 2."""


# ---------------------------------------------------------------------------
# prepared artifact layout


def _prepared_dir(cfg: RunConfig) -> Path:
    return cfg.output_dir / "prepared"


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise InputError(f"config does not name the {what}")
    if not Path(path).is_file():
        raise InputError(f"{what} not found: {path}")
    return Path(path)


def _input_key(cfg: RunConfig) -> str:
    """Content hash of everything that determines the prepared artifacts."""
    h = hashlib.sha256()
    h.update(_file_digest(_require(cfg.interactions, "interactions file")).encode())
    for m in sorted(cfg.features):
        h.update(m.encode())
        h.update(_file_digest(_require(cfg.features[m], f"{m} feature file")).encode())
        if m in cfg.feature_item_ids:
            h.update(_file_digest(_require(cfg.feature_item_ids[m], f"{m} item id list")).encode())
    h.update(json.dumps([cfg.min_degree, list(cfg.split_ratios), cfg.split_seed]).encode())
    return h.hexdigest()


def _align_features(matrix: np.ndarray, ids_path: Path | None, ds: InteractionDataset, name: str) -> np.ndarray:
    if ids_path is None:
        return matrix
    raw = [line.rstrip("\r\n") for line in open(ids_path, encoding="utf-8") if line.strip()]
    if len(raw) != matrix.shape[0]:
        raise DatasetError(f"{ids_path}: {len(raw)} ids for a feature file with {matrix.shape[0]} rows")
    row_of = {r: k for k, r in enumerate(raw)}
    missing = [i for i in ds.item_ids if i not in row_of]
    if missing:
        raise DatasetError(f"{name}: {len(missing)} items have no feature row, e.g. {missing[0]!r}")
    return matrix[[row_of[i] for i in ds.item_ids]]


def _similarity_path(prep: Path, ds_hash: str, knn_k: dict, modalities) -> Path:
    key = json.dumps([ds_hash, {m: knn_k.get(m, 0) for m in sorted(modalities)}], sort_keys=True)
    return prep / f"similarity-{hashlib.sha256(key.encode()).hexdigest()[:16]}.spgr"


def _similarity_graph(cfg: RunConfig, ds: InteractionDataset, feats: list[ModalityFeatures]):
    """kNN graph from the on-disk cache, built and stored on a miss."""
    path = _similarity_path(_prepared_dir(cfg), ds.content_hash(), cfg.train.knn_k, [f.modality_id for f in feats])
    if path.exists():
        logger.info("similarity cache hit: %s", path.name)
        return read_spgr(path), True
    graph = build_modality_graph(feats, cfg.train.knn_k)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_spgr(path, graph)
    return graph, False


def load_prepared(cfg: RunConfig) -> tuple[InteractionDataset, list[ModalityFeatures]]:
    prep = _prepared_dir(cfg)
    if not (prep / "manifest.json").exists():
        raise InputError(f"no prepared data under {prep}; run 'stair prepare' first")
    manifest = json.loads((prep / "manifest.json").read_text())
    ds = InteractionDataset.load(prep / "dataset.npz")
    if ds.content_hash() != manifest["dataset_hash"]:
        raise InputError(f"{prep / 'dataset.npz'} does not match its manifest; rerun 'stair prepare'")
    feats = [load_features(prep / f"{m}.fmat", ds.num_items, m) for m in manifest["modalities"]]
    return ds, feats


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(cfg: RunConfig, args) -> int:
    prep = _prepared_dir(cfg)
    key = _input_key(cfg)
    manifest_path = prep / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("input_key") == key and (prep / "dataset.npz").exists():
            ds = InteractionDataset.load(prep / "dataset.npz")
            feats = [load_features(prep / f"{m}.fmat", ds.num_items, m) for m in manifest["modalities"]]
            hit = True
            if feats and cfg.train.bsc:
                _, hit = _similarity_graph(cfg, ds, feats)
            print(ds.stats_line())
            print("cache hit: inputs unchanged" if hit else "cache hit for dataset; similarity graph rebuilt")
            return EXIT_OK

    ds = load_interactions(cfg.interactions, cfg.min_degree)
    ds = split_interactions(ds, cfg.split_ratios, cfg.split_seed)
    ds.validate()
    feats = []
    for m, path in sorted(cfg.features.items()):
        matrix = _align_features(read_fmat(path), cfg.feature_item_ids.get(m), ds, m)
        if matrix.shape[0] != ds.num_items:
            raise DatasetError(f"{path}: feature file has {matrix.shape[0]} rows "
                               f"but the dataset has {ds.num_items} items")
        feats.append(ModalityFeatures(m, matrix))

    prep.mkdir(parents=True, exist_ok=True)
    ds.save(prep / "dataset.npz")
    for split in ("train", "valid", "test"):
        save_interactions(ds, prep / f"{split}.tsv", split)
    (prep / "user_ids.txt").write_text("\n".join(map(str, ds.user_ids)) + "\n", encoding="utf-8")
    (prep / "item_ids.txt").write_text("\n".join(map(str, ds.item_ids)) + "\n", encoding="utf-8")
    for f in feats:
        write_fmat(prep / f"{f.modality_id}.fmat", f.matrix)
    if feats and cfg.train.bsc:
        graph, _ = _similarity_graph(cfg, ds, feats)
        logger.info("similarity graph: %d items, %d edges", graph.shape[0], graph.nnz)
    manifest = {
        "input_key": key,
        "dataset_hash": ds.content_hash(),
        "modalities": [f.modality_id for f in feats],
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "split_sizes": [len(ds.train), len(ds.valid), len(ds.test)],
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(ds.stats_line())
    return EXIT_OK


def _run_name(tc: TrainConfig, args) -> str:
    if args.baseline:
        name = args.baseline
    else:
        name = "stair" + "".join(f"-no-{p}" for p in sorted(set(args.ablate or [])))
    return f"{name}-seed{tc.seed}"


def cmd_train(cfg: RunConfig, args) -> int:
    ds, feats = load_prepared(cfg)
    tc = cfg.train
    if args.baseline:
        tc = tc.baseline(args.baseline)
    if args.ablate:
        tc = tc.ablate(*args.ablate)
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    if tc.modality_init and not feats:
        raise InputError("modality initialization needs feature files; use --ablate mi or add 'features'")
    similarity = None
    if tc.bsc:
        if not feats:
            raise InputError("BSC needs feature files; use --ablate bsc or add 'features'")
        similarity, _ = _similarity_graph(replace(cfg, train=tc), ds, feats)
    run_dir = cfg.output_dir / _run_name(tc, args)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(tc.to_json() + "\n")
    result = train(tc, ds, feats, similarity=similarity, log_path=run_dir / "metrics.csv")
    save_checkpoint(run_dir / "checkpoint.npz", result, ds.content_hash())
    print(f"best epoch {result.best_epoch} of {tc.epochs}")
    if result.best_valid is not None:
        print(result.best_valid.to_text())
    print(f"checkpoint: {run_dir / 'checkpoint.npz'}")
    return EXIT_OK


def _load_checkpoint(path) -> Checkpoint:
    try:
        return load_checkpoint(_require(Path(path), "checkpoint"))
    except (ValueError, KeyError, OSError) as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from None


def _checkpoint_representations(ckpt, ds: InteractionDataset) -> tuple[np.ndarray, np.ndarray]:
    table = ckpt.embeddings
    H = stepwise_convolution(build_bipartite_graph(ds), table.stacked, ckpt.config.forward_schedule())
    return H[:ds.num_users], H[ds.num_users:]


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ds, _ = load_prepared(cfg)
    ckpt = _load_checkpoint(args.checkpoint)
    if ckpt.dataset_hash != ds.content_hash():
        raise InputError(
            f"checkpoint was trained on dataset {ckpt.dataset_hash[:12]} but the prepared data is "
            f"{ds.content_hash()[:12]}; re-run 'stair prepare' with the original inputs or retrain")
    users, items = _checkpoint_representations(ckpt, ds)
    report = rank_and_score(users, items, ds, args.split, mask_train=not args.no_mask_train)
    text = report.to_json() if args.format == "json" else report.to_text()
    print(text)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    return EXIT_OK


def cmd_analyze_uncertainty(cfg: RunConfig, args) -> int:
    sources = args.sources if args.sources is not None else cfg.uncertainty_sources
    if not sources:
        warnings.warn("no uncertainty sources requested; nothing to do", stacklevel=2)
        print("no sources: nothing written")
        return EXIT_OK
    ds, feats = load_prepared(cfg)
    by_name = {f.modality_id: f.matrix for f in feats}
    matrices, skipped = {}, []
    for src in sources:
        if src in by_name:
            matrices[src] = by_name[src]
        elif src == "random":
            matrices[src] = gaussian_source(ds.num_items, 64, seed=cfg.train.seed)
        elif src == "pretrained":
            path = cfg.pretrained_checkpoint
            if path is None or not Path(path).is_file():
                skipped.append((src, f"no MF-BPR checkpoint at {path}"))
                continue
            ckpt = _load_checkpoint(path)
            if ckpt.dataset_hash != ds.content_hash():
                skipped.append((src, "checkpoint belongs to a different dataset"))
                continue
            matrices[src] = _checkpoint_representations(ckpt, ds)[1]
        else:
            skipped.append((src, "unknown source"))
    for src, why in skipped:
        warnings.warn(f"skipping uncertainty source {src!r}: {why}", stacklevel=2)

    out = cfg.output_dir / "uncertainty"
    out.mkdir(parents=True, exist_ok=True)
    clusters = args.clusters or cfg.uncertainty_clusters
    for C in clusters:
        reports = [behavior_uncertainty(m, ds, C, seed=cfg.train.seed, source=s) for s, m in matrices.items()]
        write_uncertainty_csv(reports, out / f"entropy_c{C}.csv")
        for rep in reports:
            np.savetxt(out / f"entropy_{rep.source}_c{C}.csv", rep.user_entropy, fmt="%.6f",
                       header="user entropy in nats, one row per dense user index", comments="# ")
        for rep in reports:
            print(f"C={C:<3d} {rep.source:<12s} mean entropy {rep.mean_entropy:.4f} nats (max {np.log(C):.4f})")
    for src, why in skipped:
        print(f"skipped {src}: {why}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stair", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the config output_dir")
        return p

    common(sub.add_parser("prepare", help="filter, split and cache the kNN graph"))
    p = common(sub.add_parser("train", help="train one configuration"))
    p.add_argument("--ablate", action="append", choices=["mi", "fsc", "bsc"], help="switch off a component")
    p.add_argument("--baseline", choices=["mf-bpr", "lightgcn"], help="train a baseline configuration")
    p.add_argument("--epochs", type=int, help="override the number of epochs")
    p = common(sub.add_parser("evaluate", help="score a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.add_argument("--no-mask-train", action="store_true", help="do not mask train items (sanity mode)")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--report", help="also write the JSON report here")
    p = common(sub.add_parser("analyze-uncertainty", help="entropy of user behavior over item clusters"))
    p.add_argument("--sources", nargs="*", help="pretrained, random or modality ids (default: from config)")
    p.add_argument("--clusters", type=int, nargs="+", help="cluster counts (default: from config)")
    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "analyze-uncertainty": cmd_analyze_uncertainty,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "baseline", None) and getattr(args, "ablate", None):
        parser.error("--baseline and --ablate are mutually exclusive")
    try:
        cfg = load_config(args.config).with_overrides(args.out, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, DatasetError, GraphError, InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort boundary for the exit-code contract
        logger.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
