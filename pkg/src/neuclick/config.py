"""Dataclass configs for models, training, and whole experiments."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError

MODEL_KINDS = ("MF", "LogReg", "SessionGRU", "SlateGRU", "AggSlateGRU", "SlateTransformer",
               "SessionTransformer", "NCM", "AdvNCM", "RANCM", "SCOT", "TransformerGRU")
FEEDBACK_MODES = ("teacher", "threshold", "sample", "gumbel")


@dataclass
class ModelConfig:
    kind: str = "NCM"
    d_hidden: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int | None = None          # None means 4 * d_hidden
    dropout: float = 0.1
    max_slate_len: int = 16
    use_position: bool | None = None  # None: on for NCM/AdvNCM, off for the GRU baselines
    feedback: str = "threshold"       # inference-time click feedback for NCM/AdvNCM/SCOT
    threshold: float = 0.5
    rancm_rollouts: int = 64

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        for name in ("d_hidden", "n_layers", "n_heads", "max_slate_len", "rancm_rollouts"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.d_hidden % self.n_heads:
            raise ConfigurationError(f"d_hidden {self.d_hidden} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.feedback not in FEEDBACK_MODES[1:]:
            raise ConfigurationError(f"inference feedback must be threshold, sample or gumbel, got {self.feedback!r}")

    @property
    def ff_width(self) -> int:
        return self.d_ff or 4 * self.d_hidden

    @property
    def positional(self) -> bool:
        if self.use_position is None:
            return self.kind in ("NCM", "AdvNCM")
        return self.use_position


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5
    tau_start: float = 2.0
    tau_end: float = 0.5
    tau_epochs: int | None = None     # None means anneal over all epochs
    readout_fraction: float = 0.2
    adv_weight: float = 1.0
    disc_steps: int = 1               # discriminator steps per generator step
    seed: int = 0
    patience: int = 5
    grad_clip: float = 5.0
    max_session_len: int = 128

    def __post_init__(self):
        if not 0.0 <= self.readout_fraction <= 1.0:
            raise ConfigurationError("readout_fraction must lie in [0, 1]")
        if self.adv_weight < 0:
            raise ConfigurationError("adv_weight must be >= 0")
        if self.disc_steps < 1:
            raise ConfigurationError("disc_steps (gen:disc ratio) must be >= 1")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ConfigurationError("Gumbel temperatures must be positive")
        if self.epochs < 0 or self.batch_size <= 0 or self.lr <= 0:
            raise ConfigurationError("epochs, batch_size and lr must be positive")

    def tau(self, epoch: int) -> float:
        """Linear anneal from tau_start to tau_end."""
        span = max((self.tau_epochs or self.epochs) - 1, 1)
        frac = min(epoch / span, 1.0)
        return self.tau_start + (self.tau_end - self.tau_start) * frac


@dataclass
class DataConfig:
    loader: str = "synthetic"         # synthetic | canonical | contentwise | rl4rs
    path: str | None = None
    n_items: int | None = None        # required for canonical files without a catalog
    column_map: dict[str, str] = field(default_factory=dict)
    window_minutes: float = 30.0
    name: str | None = None
    # synthetic oracle
    n_users: int = 50
    n_catalog: int = 100
    dim: int = 8
    scale: float = 0.5
    position_bias: float = -0.2
    fatigue: float = 0.3
    n_sessions: int = 2000
    slates_per_session: int = 3
    slate_len: int = 8
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.loader not in ("synthetic", "canonical", "contentwise", "rl4rs"):
            raise ConfigurationError(f"unknown loader {self.loader!r}")
        self.split = tuple(self.split)

    @property
    def dataset_name(self) -> str:
        return self.name or self.loader


@dataclass
class EmbeddingConfig:
    kind: str = "learnable"           # svd | learnable | external
    dim: int = 32
    als_iterations: int = 15
    als_reg: float = 0.1


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs"
    seed: int = 0
    bootstrap_samples: int = 1000

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["data"]["split"] = list(d["data"]["split"])
        return d

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ExperimentConfig:
        raw = dict(raw or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, typ in (("data", DataConfig), ("embedding", EmbeddingConfig),
                          ("model", ModelConfig), ("train", TrainConfig)):
            section = raw.pop(name, None) or {}
            fields = {f.name for f in dataclasses.fields(typ)}
            bad = set(section) - fields
            if bad:
                raise ConfigurationError(f"unknown {name} fields: {sorted(bad)}")
            try:
                parts[name] = typ(**section)
            except TypeError as exc:
                raise ConfigurationError(f"{name}: {exc}") from None
        return cls(**parts, **raw)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"invalid YAML in {path}: {exc}") from None
        return cls.from_dict(raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        """Stable hash of the resolved config (output_dir excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, Any]) -> ExperimentConfig:
        """Apply dotted-key overrides such as ``{"train.epochs": 3}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            node = d
            *path, leaf = key.split(".")
            for p in path:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigurationError(f"unknown config key {key!r}")
                node = node[p]
            if leaf not in node:
                raise ConfigurationError(f"unknown config key {key!r}")
            node[leaf] = value
        return ExperimentConfig.from_dict(d)
