"""Response architectures behind one contract, plus checkpoint IO."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..config import ModelConfig
from ..embeddings import EmbeddingSource
from ..errors import ConfigurationError, DataError, DimensionError
from .attention import SCOT, SessionTransformer, SlateTransformer, TransformerGRU
from .base import TEACHER, Feedback, ForwardOutput, ResponseModel
from .baselines import MF, LogReg
from .rancm import RANCM, Rollout
from .recurrent import NCM, AdvNCM, AggSlateGRU, SessionGRU, SlateGRU

MODEL_CLASSES: dict[str, type[ResponseModel]] = {
    cls.kind: cls for cls in (MF, LogReg, SessionGRU, SlateGRU, AggSlateGRU, SlateTransformer,
                              SessionTransformer, NCM, AdvNCM, RANCM, SCOT, TransformerGRU)
}

CHECKPOINT_VERSION = 1


def build_model(config: ModelConfig, embeddings: EmbeddingSource, seed: int = 0) -> ResponseModel:
    return MODEL_CLASSES[config.kind](config, embeddings, seed)


def _zip_entry(name: str) -> zipfile.ZipInfo:
    # fixed timestamp so identical contents give identical bytes
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    return info


def save_checkpoint(model: ResponseModel, path: str | Path, metadata: dict | None = None) -> Path:
    """One file: JSON header (config, shapes, provenance) plus named ``.npy`` arrays."""
    path = Path(path)
    arrays = {f"model/{k}": v for k, v in sorted(model.state_arrays().items())}
    arrays.update({f"embeddings/{k}": v for k, v in sorted(model.embeddings.to_arrays().items())})
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "config": {k: getattr(model.config, k) for k in model.config.__dataclass_fields__},
        "embedding_kind": model.embeddings.kind,
        "user_keys": model.embeddings.user_keys,
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "metadata": metadata or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_zip_entry("header.json"), json.dumps(header, sort_keys=True, indent=1))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype=np.float64), allow_pickle=False)
            zf.writestr(_zip_entry(name + ".npy"), buf.getvalue())
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            arrays = {n[:-4]: np.lib.format.read_array(io.BytesIO(zf.read(n)), allow_pickle=False)
                      for n in zf.namelist() if n.endswith(".npy")}
    except (OSError, KeyError, zipfile.BadZipFile, ValueError) as exc:
        raise DataError(f"unreadable checkpoint {path}: {exc}") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint version {header.get('version')} != supported {CHECKPOINT_VERSION}")
    return header, arrays


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> ResponseModel:
    """Rebuild a model; rejects a config that differs from ``expect`` or any shape mismatch."""
    header, arrays = read_checkpoint(path)
    config = ModelConfig(**header["config"])
    if expect is not None and expect != config:
        raise ConfigurationError(f"checkpoint config {config} does not match requested {expect}")
    for name, shape in header["shapes"].items():
        if name not in arrays or list(arrays[name].shape) != shape:
            raise DimensionError(f"checkpoint array {name!r} missing or not of shape {shape}")
    emb = EmbeddingSource.from_arrays(
        header["embedding_kind"],
        {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("embeddings/")},
        header["user_keys"],
    )
    model = build_model(config, emb, header["seed"])
    load_state(model, {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("model/")})
    return model


def load_state(model: ResponseModel, state: dict[str, np.ndarray]) -> None:
    tensors = dict(model.params)
    tensors.update(getattr(model, "disc_params", {}))
    if set(tensors) != set(state):
        missing, extra = sorted(set(tensors) - set(state)), sorted(set(state) - set(tensors))
        raise DimensionError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for k, t in tensors.items():
        if t.shape != state[k].shape:
            raise DimensionError(f"parameter {k!r}: checkpoint shape {state[k].shape} != model {t.shape}")
        t.data = np.array(state[k], dtype=np.float64)


__all__ = [
    "AdvNCM", "AggSlateGRU", "Feedback", "ForwardOutput", "LogReg", "MF", "MODEL_CLASSES", "NCM",
    "RANCM", "ResponseModel", "Rollout", "SCOT", "SessionGRU", "SessionTransformer", "SlateGRU",
    "SlateTransformer", "TEACHER", "TransformerGRU", "build_model", "load_checkpoint", "load_state",
    "read_checkpoint", "save_checkpoint",
]
