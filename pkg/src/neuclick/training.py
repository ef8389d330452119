"""Training loops: supervised (with the readout/teacher-forcing mix), adversarial, and RANCM."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .datamodel import Session, build_batch, iter_batches
from .diffmath import AdamW, Rng, Tensor, bce_with_logits, clip_grad_norm, no_grad, ops
from .discretize import discretize
from .errors import ConfigurationError, NumericError, UndefinedMetricError, UnsupportedDatasetError
from .evaluation import compute_metrics
from .models import TEACHER, Feedback, ResponseModel
from .models.recurrent import AdvNCM

log = logging.getLogger(__name__)

__all__ = [
    "ReadoutSchedule", "TrainResult", "discretize", "score_sessions", "train", "train_adversarial",
    "train_discriminator", "train_rancm", "train_supervised",
]


class ReadoutSchedule:
    """Seeded per-iteration coin: readout (gumbel feedback) with probability ``fraction``, else teacher."""

    def __init__(self, fraction: float, rng: Rng):
        if not 0.0 <= fraction <= 1.0:
            raise ConfigurationError(f"readout_fraction must lie in [0, 1], got {fraction}")
        self.fraction = fraction
        self.rng = rng
        self.counts = {"readout": 0, "teacher": 0}

    def next(self) -> str:
        mode = "readout" if self.rng.uniform() < self.fraction else "teacher"
        self.counts[mode] += 1
        return mode


@dataclass
class TrainResult:
    model: ResponseModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = -np.inf
    warnings: list[str] = field(default_factory=list)


def score_sessions(model: ResponseModel, sessions: Sequence[Session], batch_size: int = 256,
                   rng: Rng | None = None, max_len: int = 128) -> dict[str, np.ndarray]:
    """Inference probabilities flattened over unmasked impressions, with labels and session index."""
    probs, labels, index = [], [], []
    for start in range(0, len(sessions), batch_size):
        batch = build_batch(list(sessions[start:start + batch_size]), max_len)
        p = model.predict(batch, rng)
        probs.append(p[batch.mask])
        labels.append(batch.clicks[batch.mask])
        rows = np.broadcast_to(np.arange(start, start + batch.size)[:, None], batch.mask.shape)
        index.append(rows[batch.mask])
    return {"probs": np.concatenate(probs), "labels": np.concatenate(labels),
            "session": np.concatenate(index)}


def _validate(model: ResponseModel, sessions: Sequence[Session], cfg: TrainConfig) -> dict[str, float | None]:
    if not sessions:
        return {"val_auc": None, "val_f1": None, "val_acc": None}
    s = score_sessions(model, sessions, max(cfg.batch_size, 256), Rng(cfg.seed).child("validation"),
                       cfg.max_session_len)
    try:
        m = compute_metrics(s["probs"], s["labels"])
    except UndefinedMetricError:
        return {"val_auc": None, "val_f1": None, "val_acc": None}
    return {"val_auc": m["auc"], "val_f1": m["f1"], "val_acc": m["accuracy"]}


def _snapshot(model: ResponseModel) -> dict[str, np.ndarray]:
    tensors = {**model.parameters(), **getattr(model, "disc_params", {})}
    return {k: t.data.copy() for k, t in tensors.items()}


def _restore(model: ResponseModel, state: dict[str, np.ndarray]) -> None:
    tensors = {**model.parameters(), **getattr(model, "disc_params", {})}
    for k, t in tensors.items():
        t.data = state[k].copy()


class _where:
    """Re-raise numeric failures inside a training step with (epoch, batch) attached."""

    def __init__(self, epoch: int, step: int):
        self.epoch, self.step = epoch, step

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if typ is NumericError and "at epoch" not in str(exc):
            raise NumericError(f"{exc} (at epoch {self.epoch}, batch {self.step})") from exc
        return False


def _finite(loss: Tensor, epoch: int, step: int) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"non-finite training loss {value} at epoch {epoch}, batch {step}")
    return value


class _Loop:
    """Shared epoch bookkeeping: logging, early stopping, best-checkpoint restore."""

    def __init__(self, model, cfg: TrainConfig, log_path, config_hash: str, higher_is_better: bool = True):
        self.result = TrainResult(model)
        self.cfg = cfg
        self.sign = 1.0 if higher_is_better else -1.0
        self.best_state = None
        self.stale = 0
        self.log_path = Path(log_path) if log_path else None
        self.config_hash = config_hash
        if self.log_path:
            self.log_path.write_text("")

    def end_epoch(self, epoch: int, record: dict, score: float | None) -> bool:
        """Record the epoch; returns True when training should stop."""
        record = {"epoch": epoch, **record, "config_hash": self.config_hash, "seed": self.cfg.seed}
        self.result.log.append(record)
        if self.log_path:
            with self.log_path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if score is None:
            self.best_state = _snapshot(self.result.model)
            self.result.best_epoch = epoch
            return False
        if self.sign * score > self.sign * self.result.best_score or self.best_state is None:
            self.result.best_score = score
            self.result.best_epoch = epoch
            self.best_state = _snapshot(self.result.model)
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.cfg.patience

    def finish(self) -> TrainResult:
        if self.best_state is not None:
            _restore(self.result.model, self.best_state)
        return self.result


def _streams(cfg: TrainConfig) -> tuple[Rng, Rng, Rng]:
    root = Rng(cfg.seed)
    return root.child("shuffle"), root.child("readout"), root.child("noise")


def train_supervised(model: ResponseModel, train_sessions: Sequence[Session], val_sessions: Sequence[Session],
                     cfg: TrainConfig, log_path=None, config_hash: str = "") -> TrainResult:
    """Masked BCE.  Readout models flip a seeded coin per iteration between gumbel
    feedback (gradient through the readout chain) and teacher forcing."""
    if model.kind in ("AdvNCM", "RANCM"):
        raise ConfigurationError(f"{model.kind} has a dedicated training loop")
    shuffle, coin, noise = _streams(cfg)
    schedule = ReadoutSchedule(cfg.readout_fraction, coin)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    loop = _Loop(model, cfg, log_path, config_hash)
    if not params:
        # fixed embeddings and no weights of its own (MF over SVD/external): nothing to fit
        loop.end_epoch(0, {"train_loss": None, **_validate(model, val_sessions, cfg),
                           "mode_counts": dict(schedule.counts)}, None)
        return loop.finish()
    readout_model = model.kind == "NCM"
    for epoch in range(cfg.epochs):
        tau = cfg.tau(epoch)
        losses = []
        for step, batch in enumerate(iter_batches(train_sessions, cfg.batch_size, shuffle, cfg.max_session_len)):
            fb = TEACHER
            if readout_model and schedule.next() == "readout":
                fb = Feedback("gumbel", rng=noise, tau=tau)
            with _where(epoch, step):
                loss = model.loss(batch, fb, train=True, rng=noise)
                losses.append(_finite(loss, epoch, step))
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(params, cfg.grad_clip)
                opt.step()
        val = _validate(model, val_sessions, cfg)
        record = {"train_loss": float(np.mean(losses)) if losses else None, **val,
                  "mode_counts": dict(schedule.counts), "tau": tau}
        if loop.end_epoch(epoch, record, val["val_auc"]):
            break
    return loop.finish()


def _disc_step(model: AdvNCM, batch, fake: np.ndarray, opt: AdamW, cfg: TrainConfig) -> tuple[float, float]:
    real_logit = model.discriminate(batch, batch.clicks)
    fake_logit = model.discriminate(batch, fake)
    logits = ops.concat([real_logit, fake_logit], axis=0)
    target = np.concatenate([np.ones(batch.size), np.zeros(batch.size)])
    loss = bce_with_logits(logits, target)
    for t in model.parameters().values():
        t.grad = None
    opt.zero_grad()
    loss.backward()
    clip_grad_norm(model.disc_params, cfg.grad_clip)
    opt.step()
    acc = float(((logits.data > 0) == (target > 0.5)).mean())
    return float(loss.data), acc


def train_adversarial(model: AdvNCM, train_sessions: Sequence[Session], val_sessions: Sequence[Session],
                      cfg: TrainConfig, log_path=None, config_hash: str = "") -> TrainResult:
    """Generator: BCE + adv_weight * fool-the-discriminator loss through straight-through
    Gumbel clicks.  Discriminator: real (observed clicks) vs generated, same user and items.

    The discriminator draws no randomness, and the generator consumes the same
    streams as :func:`train_supervised`, so ``adv_weight=0`` reproduces
    supervised gumbel-feedback training exactly.
    """
    if not isinstance(model, AdvNCM):
        raise ConfigurationError("train_adversarial needs an AdvNCM model")
    shuffle, _, noise = _streams(cfg)
    params = model.parameters()
    gen_opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    disc_opt = AdamW(model.disc_params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    loop = _Loop(model, cfg, log_path, config_hash)
    iterations = 0
    for epoch in range(cfg.epochs):
        tau = cfg.tau(epoch)
        bces, advs, dlosses, daccs = [], [], [], []
        for step, batch in enumerate(iter_batches(train_sessions, cfg.batch_size, shuffle, cfg.max_session_len)):
            with _where(epoch, step):
                out = model.forward(batch, Feedback("gumbel", rng=noise, tau=tau), train=True, rng=noise)
                bce = bce_with_logits(out.logits, batch.clicks, batch.mask)
                fooled = bce_with_logits(model.discriminate(batch, out.decisions), np.ones(batch.size))
                loss = ops.add(bce, ops.mul(fooled, cfg.adv_weight))
                bces.append(_finite(bce, epoch, step))
                advs.append(float(fooled.data))
                gen_opt.zero_grad()
                loss.backward()
                for t in model.disc_params.values():
                    t.grad = None
                clip_grad_norm(params, cfg.grad_clip)
                gen_opt.step()
                fake = out.decisions.data
                for _ in range(cfg.disc_steps):
                    dl, da = _disc_step(model, batch, fake, disc_opt, cfg)
                    dlosses.append(dl)
                    daccs.append(da)
            iterations += 1
        val = _validate(model, val_sessions, cfg)
        disc_acc = float(np.mean(daccs)) if daccs else None
        record = {"train_loss": float(np.mean(bces)) if bces else None, **val,
                  "mode_counts": {"readout": iterations, "teacher": 0}, "tau": tau,
                  "adv_loss": float(np.mean(advs)) if advs else None,
                  "disc_loss": float(np.mean(dlosses)) if dlosses else None, "disc_acc": disc_acc}
        if daccs and min(daccs) == 1.0:
            msg = f"epoch {epoch}: discriminator accuracy pinned at 1.0 (collapse)"
            log.warning(msg)
            loop.result.warnings.append(msg)
            record["warning"] = msg
        if loop.end_epoch(epoch, record, val["val_auc"]):
            break
    return loop.finish()


def train_discriminator(model: AdvNCM, sessions: Sequence[Session], cfg: TrainConfig,
                        fake_mode: str = "sample") -> list[float]:
    """Fit only the discriminator against a frozen generator; returns per-epoch accuracy."""
    shuffle, _, noise = _streams(cfg)
    opt = AdamW(model.disc_params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        accs = []
        for batch in iter_batches(sessions, cfg.batch_size, shuffle, cfg.max_session_len):
            with no_grad():
                fake = model.forward(batch, Feedback(fake_mode, rng=noise), train=False).decisions.data
            accs.append(_disc_step(model, batch, fake, opt, cfg)[1])
        history.append(float(np.mean(accs)))
    return history


def discriminator_accuracy(model: AdvNCM, sessions: Sequence[Session], seed: int = 0,
                           fake_mode: str = "sample") -> float:
    batch = build_batch(list(sessions))
    with no_grad():
        fake = model.forward(batch, Feedback(fake_mode, rng=Rng(seed)), train=False).decisions.data
        real = model.discriminate(batch, batch.clicks).data
        gen = model.discriminate(batch, fake).data
    return float(np.concatenate([real > 0, gen <= 0]).mean())


def _require_order(sessions: Sequence[Session]) -> None:
    if not all(s.has_click_order for s in sessions):
        raise UnsupportedDatasetError("RANCM needs click order, which this dataset does not provide")


def train_rancm(model: ResponseModel, train_sessions: Sequence[Session], val_sessions: Sequence[Session],
                cfg: TrainConfig, log_path=None, config_hash: str = "") -> TrainResult:
    """Teacher-forced pick-sequence NLL; early stopping on validation NLL."""
    if model.kind != "RANCM":
        raise ConfigurationError("train_rancm needs a RANCM model")
    _require_order(train_sessions)
    _require_order(val_sessions)
    shuffle, _, _ = _streams(cfg)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    loop = _Loop(model, cfg, log_path, config_hash, higher_is_better=False)
    for epoch in range(cfg.epochs):
        losses = []
        for step, batch in enumerate(iter_batches(train_sessions, cfg.batch_size, shuffle, cfg.max_session_len)):
            with _where(epoch, step):
                loss = model.loss(batch)
                losses.append(_finite(loss, epoch, step))
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(params, cfg.grad_clip)
                opt.step()
        val_nll = None
        if val_sessions:
            with no_grad():
                val_nll = float(np.mean([model.slate_nll(b).data.mean() for b in
                                         iter_batches(val_sessions, 256, None, cfg.max_session_len)]))
        record = {"train_loss": float(np.mean(losses)) if losses else None, **_validate(model, val_sessions, cfg),
                  "val_nll": val_nll, "mode_counts": {"readout": 0, "teacher": len(losses)}}
        if loop.end_epoch(epoch, record, val_nll):
            break
    return loop.finish()


def train(model: ResponseModel, train_sessions, val_sessions, cfg: TrainConfig, log_path=None,
          config_hash: str = "") -> TrainResult:
    """Dispatch to the loop each kind needs."""
    if model.kind == "RANCM":
        return train_rancm(model, train_sessions, val_sessions, cfg, log_path, config_hash)
    if model.kind == "AdvNCM":
        return train_adversarial(model, train_sessions, val_sessions, cfg, log_path, config_hash)
    return train_supervised(model, train_sessions, val_sessions, cfg, log_path, config_hash)
