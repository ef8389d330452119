"""Experiment orchestration shared by the CLI and the scripts: data, runs, reports."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .datamodel import Session, split_dataset, validate_catalog
from .diffmath import Rng
from .embeddings import build_embeddings
from .errors import ConfigurationError, DataError, UndefinedMetricError, UnsupportedDatasetError
from .evaluation import EMBEDDING_LABELS, EvalReport, ReportRow, bootstrap_compare, compute_metrics, roc_auc
from .ingest import (
    Dataset,
    OracleUserModel,
    generate_synthetic,
    load_canonical,
    load_contentwise,
    load_rl4rs,
    write_canonical,
    write_embedding_table,
)
from .models import ResponseModel, build_model, load_checkpoint, save_checkpoint
from .training import TrainResult, score_sessions, train

log = logging.getLogger(__name__)

CONFIG_FILE = "config.yaml"
CHECKPOINT_FILE = "model.ckpt"
EPOCH_LOG = "epochs.jsonl"
REPORT_FILE = "report.json"
MANIFEST = "manifest.json"


@dataclass
class PreparedData:
    dataset: Dataset
    train: list[Session]
    val: list[Session]
    test: list[Session]
    oracle: OracleUserModel | None
    name: str


def validate_config(cfg: ExperimentConfig) -> None:
    """Static checks that need no data: paths exist, model/data pairing is supported."""
    d = cfg.data
    if d.loader != "synthetic":
        if not d.path:
            raise ConfigurationError(f"loader {d.loader!r} needs data.path")
        if not Path(d.path).exists():
            raise ConfigurationError(f"data.path {d.path} does not exist")
    if cfg.model.kind == "RANCM" and d.loader == "rl4rs":
        raise UnsupportedDatasetError("RANCM needs click order; the RL4RS loader provides none")
    if cfg.embedding.kind not in EMBEDDING_LABELS:
        raise ConfigurationError(f"unknown embedding kind {cfg.embedding.kind!r}")
    if cfg.embedding.kind == "external" and d.loader in ("canonical", "contentwise"):
        raise ConfigurationError(f"loader {d.loader!r} provides no external embeddings")


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    validate_config(cfg)
    d = cfg.data
    oracle = None
    if d.loader == "synthetic":
        oracle = OracleUserModel.random(d.n_users, d.n_catalog, d.dim, scale=d.scale, position_bias=d.position_bias,
                                        max_slate_len=d.slate_len, fatigue=d.fatigue, seed=cfg.seed)
        sessions = generate_synthetic(oracle, d.n_sessions, d.slates_per_session, d.slate_len,
                                      Rng(cfg.seed).child("sessions"))
        dataset = Dataset(sessions, d.n_catalog, None, oracle.external_embeddings())
    elif d.loader == "canonical":
        sessions = load_canonical(d.path, d.n_items)
        n_items = d.n_items or 1 + max(i for s in sessions for sl in s.slates for i in sl.items)
        dataset = Dataset(sessions, n_items)
    elif d.loader == "contentwise":
        dataset = load_contentwise(d.path, d.column_map or None, window_minutes=d.window_minutes)
    else:
        dataset = load_rl4rs(d.path, d.column_map or None)
    validate_catalog(dataset.sessions, dataset.n_items)
    if cfg.model.kind == "RANCM" and not dataset.has_click_order:
        raise UnsupportedDatasetError("RANCM needs click order, which this dataset does not provide")
    if cfg.embedding.kind == "external" and dataset.external is None:
        raise ConfigurationError("external embeddings requested but the dataset provides none")
    train_s, val_s, test_s = split_dataset(dataset.sessions, d.split, seed=cfg.seed)
    return PreparedData(dataset, train_s, val_s, test_s, oracle, d.dataset_name)


def data_hash(cfg: ExperimentConfig) -> str:
    blank = dataclasses.replace(cfg, model=type(cfg.model)(), train=type(cfg.train)(),
                                embedding=type(cfg.embedding)(), output_dir="")
    return blank.config_hash()


def run_dir_for(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / f"{cfg.model.kind}-{cfg.embedding.kind}-{cfg.config_hash()}"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_config(path: Path, cfg: ExperimentConfig) -> None:
    path.write_text(f"# config_hash: {cfg.config_hash()}\n# seed: {cfg.seed}\n" + cfg.dump())


def bayes_ceiling(data: PreparedData) -> float | None:
    if data.oracle is None:
        return None
    probs = np.concatenate([data.oracle.session_probabilities(s) for s in data.test])
    labels = np.concatenate([[c for sl in s.slates for c in sl.clicks] for s in data.test])
    try:
        return roc_auc(probs, labels)
    except UndefinedMetricError:
        return None


# -- commands ------------------------------------------------------------------


def run_ingest(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """Canonical train/val/test files plus a provenance manifest."""
    data = prepare_data(cfg)
    out = Path(out_dir) if out_dir else Path(cfg.output_dir) / f"data-{data_hash(cfg)}"
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", data.train), ("val", data.val), ("test", data.test)):
        write_canonical(part, out / f"{name}.jsonl")
    ext = data.dataset.external
    if ext is not None:
        keys = data.dataset.item_keys or [str(i) for i in range(data.dataset.n_items)]
        write_embedding_table(out / "item_embeddings.csv", keys, ext.item_vectors)
        if ext.user_vectors:
            users = sorted(ext.user_vectors)
            write_embedding_table(out / "user_embeddings.csv", users, np.stack([ext.user_vectors[u] for u in users]))
    write_config(out / CONFIG_FILE, cfg)
    _write_json(out / MANIFEST, {
        "config_hash": cfg.config_hash(), "data_hash": data_hash(cfg), "seed": cfg.seed, "dataset": data.name,
        "n_items": data.dataset.n_items, "has_click_order": data.dataset.has_click_order,
        "sessions": {"train": len(data.train), "val": len(data.val), "test": len(data.test)},
        "bayes_auc_test": bayes_ceiling(data), "item_keys": data.dataset.item_keys,
    })
    return out


def build_run_model(cfg: ExperimentConfig, data: PreparedData) -> ResponseModel:
    """Data is keyed on ``cfg.seed``; initialisation on ``cfg.train.seed``."""
    e = cfg.embedding
    seed = cfg.train.seed
    emb = build_embeddings(e.kind, data.train, data.dataset.n_items, e.dim, seed=seed,
                           als_iterations=e.als_iterations, als_reg=e.als_reg, external=data.dataset.external)
    return build_model(cfg.model, emb, seed)


def run_train(cfg: ExperimentConfig, force: bool = False, run_dir: str | Path | None = None) -> tuple[Path, TrainResult]:
    data = prepare_data(cfg)
    out = Path(run_dir) if run_dir else run_dir_for(cfg)
    if (out / CHECKPOINT_FILE).exists() and not force:
        raise ConfigurationError(f"run directory {out} already holds a checkpoint; pass --force to retrain")
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / CONFIG_FILE, cfg)
    model = build_run_model(cfg, data)
    result = train(model, data.train, data.val, cfg.train, out / EPOCH_LOG, cfg.config_hash())
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "config": cfg.to_dict(),
            "best_epoch": result.best_epoch, "dataset": data.name}
    save_checkpoint(model, out / CHECKPOINT_FILE, meta)
    _write_json(out / MANIFEST, {
        "config_hash": cfg.config_hash(), "seed": cfg.seed, "config": cfg.to_dict(), "kind": model.kind,
        "n_parameters": model.n_parameters(), "best_epoch": result.best_epoch,
        "best_val": None if not np.isfinite(result.best_score) else result.best_score,
        "epochs_run": len(result.log), "warnings": result.warnings,
        "artifacts": [CONFIG_FILE, EPOCH_LOG, CHECKPOINT_FILE, MANIFEST],
    })
    return out, result


def load_run(run_dir: str | Path) -> tuple[ExperimentConfig, ResponseModel]:
    run_dir = Path(run_dir)
    if not (run_dir / CHECKPOINT_FILE).exists():
        raise DataError(f"{run_dir} has no {CHECKPOINT_FILE}; train it first")
    cfg = ExperimentConfig.load(run_dir / CONFIG_FILE)
    return cfg, load_checkpoint(run_dir / CHECKPOINT_FILE, cfg.model)


def _scores(cfg: ExperimentConfig, model: ResponseModel, sessions) -> dict[str, np.ndarray]:
    return score_sessions(model, sessions, rng=Rng(cfg.seed).child("evaluate"),
                          max_len=cfg.train.max_session_len)


def run_evaluate(run_dir: str | Path, baselines: Sequence[str | Path] = ()) -> EvalReport:
    """Test-set metrics (plus paired bootstrap against each baseline run) written to report.json."""
    run_dir = Path(run_dir)
    cfg, model = load_run(run_dir)
    data = prepare_data(cfg)
    scores = _scores(cfg, model, data.test)
    m = compute_metrics(scores["probs"], scores["labels"])
    row = ReportRow(model.kind, EMBEDDING_LABELS[cfg.embedding.kind], data.name, m["auc"], m["f1"], m["accuracy"],
                    int(len(scores["labels"])))
    boot = []
    for other in baselines:
        ocfg, omodel = load_run(other)
        if data_hash(ocfg) != data_hash(cfg):
            raise ConfigurationError(f"baseline {other} was trained on different data")
        oscores = _scores(ocfg, omodel, data.test)
        res = bootstrap_compare(scores["probs"], oscores["probs"], scores["labels"], scores["session"],
                                n=cfg.bootstrap_samples, seed=cfg.seed)
        for r in res.values():
            boot.append({"baseline": f"{omodel.kind}/{EMBEDDING_LABELS[ocfg.embedding.kind]}",
                         "baseline_hash": ocfg.config_hash(), **r.to_dict()})
    extras = {"bayes_auc": bayes_ceiling(data), "n_test_sessions": len(data.test)}
    report = EvalReport([row], cfg.seed, cfg.config_hash(), boot, extras)
    (run_dir / REPORT_FILE).write_text(report.to_json() + "\n")
    return report


def load_reports(run_dirs: Sequence[str | Path]) -> list[EvalReport]:
    reports = []
    for d in run_dirs:
        path = Path(d) / REPORT_FILE if Path(d).is_dir() else Path(d)
        if not path.exists():
            raise DataError(f"no {REPORT_FILE} in {d}; run evaluate first")
        try:
            reports.append(EvalReport.from_json(path.read_text()))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise DataError(f"malformed report {path}: {exc}") from None
    return reports
