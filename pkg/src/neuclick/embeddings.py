"""Item/user representation providers: ALS factors, learnable tables, external files."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .datamodel import Session
from .diffmath import Rng, Tensor, ops, parameter
from .errors import CatalogError, ConfigurationError, DataError, NumericError

log = logging.getLogger(__name__)

KINDS = ("svd", "learnable", "external")


def init_user_from_history(history: Sequence[int], item_table: np.ndarray) -> np.ndarray:
    """Mean of the clicked items' vectors; zeros for an empty history."""
    item_table = np.asarray(item_table, dtype=np.float64)
    if len(history) == 0:
        return np.zeros(item_table.shape[1])
    return item_table[np.asarray(history, dtype=np.int64)].mean(axis=0)


def user_histories(sessions: Sequence[Session]) -> dict[str, list[int]]:
    hist: dict[str, list[int]] = {}
    for s in sessions:
        hist.setdefault(s.user_id, []).extend(s.clicked_items())
    return hist


@dataclass
class EmbeddingSource:
    kind: str
    item_table: Tensor
    user_table: Tensor
    user_index: dict[str, int]
    objective_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"embedding kind must be one of {KINDS}, got {self.kind!r}")
        if self.item_table.shape[1] != self.user_table.shape[1]:
            raise ConfigurationError(
                f"item dimension {self.item_table.shape[1]} != user dimension {self.user_table.shape[1]}"
            )
        if not (np.isfinite(self.item_table.data).all() and np.isfinite(self.user_table.data).all()):
            raise NumericError("embedding tables contain non-finite values")
        self._warned: set[str] = set()

    @property
    def trainable(self) -> bool:
        return self.kind == "learnable"

    @property
    def dim(self) -> int:
        return self.item_table.shape[1]

    @property
    def n_items(self) -> int:
        return self.item_table.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        if not self.trainable:
            return {}
        return {"emb.item": self.item_table, "emb.user": self.user_table}

    def items(self, ids: np.ndarray) -> Tensor:
        """Item vectors for any-shaped id array; -1 gives zeros."""
        ids = np.asarray(ids)
        if ids.size and ids.max() >= self.n_items:
            raise CatalogError(f"item id {int(ids.max())} outside catalog of {self.n_items}")
        return ops.embedding_lookup(self.item_table, ids)

    def users(self, user_ids: Sequence[str], histories: Mapping[str, Sequence[int]] | None = None) -> Tensor:
        """User vectors; unseen users fall back to their history mean (zeros without one)."""
        idx = np.array([self.user_index.get(u, -1) for u in user_ids], dtype=np.int64)
        out = ops.embedding_lookup(self.user_table, idx)
        unknown = np.nonzero(idx < 0)[0]
        if len(unknown) == 0:
            return out
        fallback = np.zeros(out.shape)
        for b in unknown:
            uid = user_ids[b]
            hist = (histories or {}).get(uid, ())
            fallback[b] = init_user_from_history(hist, self.item_table.data)
            if uid not in self._warned:
                self._warned.add(uid)
                log.info("user %r has no embedding; using history-mean fallback over %d items", uid, len(hist))
        return ops.add(out, fallback)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"emb.item": self.item_table.data, "emb.user": self.user_table.data}

    @classmethod
    def from_arrays(cls, kind: str, arrays: Mapping[str, np.ndarray], user_keys: Sequence[str]) -> EmbeddingSource:
        make = parameter if kind == "learnable" else Tensor
        return cls(kind, make(np.array(arrays["emb.item"])), make(np.array(arrays["emb.user"])),
                   {u: i for i, u in enumerate(user_keys)})

    @property
    def user_keys(self) -> list[str]:
        return sorted(self.user_index, key=self.user_index.get)


# -- ALS -------------------------------------------------------------------------


def als_objective(r: np.ndarray, p: np.ndarray, q: np.ndarray, reg: float) -> float:
    resid = r - p @ q.T
    return float((resid * resid).sum() + reg * ((p * p).sum() + (q * q).sum()))


def _ridge_rows(r: np.ndarray, fixed: np.ndarray, reg: float) -> np.ndarray:
    """argmin_X ||R - X F^T||^2 + reg ||X||^2, solved for all rows at once."""
    gram = fixed.T @ fixed + reg * np.eye(fixed.shape[1])
    try:
        return np.linalg.solve(gram, fixed.T @ r.T).T
    except np.linalg.LinAlgError:
        raise NumericError("singular ALS normal equations") from None


def train_als(interactions: np.ndarray, rank: int = 32, iterations: int = 15, reg: float = 0.1,
              seed: int = 0, user_keys: Sequence[str] | None = None) -> EmbeddingSource:
    """Unweighted ALS over every matrix cell (no implicit-feedback confidence weights).

    Minimises sum (r_ui - <p_u, q_i>)^2 + reg (|P|^2 + |Q|^2); the objective
    after each half-step is recorded in ``objective_trace``.
    """
    r = np.asarray(interactions, dtype=np.float64)
    n_users, n_items = r.shape
    if not 1 <= rank <= min(n_users, n_items):
        raise ConfigurationError(f"rank {rank} must be in [1, min({n_users}, {n_items})]")
    if reg < 0:
        raise ConfigurationError(f"regularisation must be >= 0, got {reg}")
    rng = Rng(seed)
    q = rng.normal(0.0, 0.1, (n_items, rank))
    p = np.zeros((n_users, rank))
    trace = []
    for _ in range(iterations):
        p = _ridge_rows(r, q, reg)
        trace.append(als_objective(r, p, q, reg))
        q = _ridge_rows(r.T, p, reg)
        trace.append(als_objective(r, p, q, reg))
    if not (np.isfinite(p).all() and np.isfinite(q).all()):
        raise NumericError("ALS produced non-finite factors")
    keys = list(user_keys) if user_keys is not None else [str(i) for i in range(n_users)]
    return EmbeddingSource("svd", Tensor(q), Tensor(p), {k: i for i, k in enumerate(keys)}, trace)


def interaction_matrix(sessions: Sequence[Session], n_items: int, user_keys: Sequence[str]) -> np.ndarray:
    index = {u: i for i, u in enumerate(user_keys)}
    r = np.zeros((len(user_keys), n_items))
    for s in sessions:
        for item in s.clicked_items():
            r[index[s.user_id], item] = 1.0
    return r


def score_mf(user: int, item: int, source: EmbeddingSource) -> float:
    """<p_u, q_i>, the matrix-factorisation ranking score."""
    if not 0 <= user < source.user_table.shape[0]:
        raise CatalogError(f"user index {user} out of range")
    if not 0 <= item < source.n_items:
        raise CatalogError(f"item index {item} out of range")
    return float(source.user_table.data[user] @ source.item_table.data[item])


# -- builders ----------------------------------------------------------------------


def build_embeddings(kind: str, train_sessions: Sequence[Session], n_items: int, dim: int = 32, *,
                     seed: int = 0, als_iterations: int = 15, als_reg: float = 0.1,
                     external=None) -> EmbeddingSource:
    """Construct one of the three sources from training sessions."""
    user_keys = sorted({s.user_id for s in train_sessions})
    histories = user_histories(train_sessions)
    if kind == "svd":
        r = interaction_matrix(train_sessions, n_items, user_keys)
        return train_als(r, min(dim, len(user_keys), n_items), als_iterations, als_reg, seed, user_keys)
    if kind == "learnable":
        rng = Rng(seed).child("embeddings")
        items = rng.uniform(-0.1, 0.1, (n_items, dim))
        users = np.stack([init_user_from_history(histories.get(u, ()), items) for u in user_keys])
        return EmbeddingSource("learnable", parameter(items, "emb.item"), parameter(users, "emb.user"),
                               {u: i for i, u in enumerate(user_keys)})
    if kind == "external":
        if external is None:
            raise ConfigurationError("external embeddings requested but the dataset provides none")
        items = np.asarray(external.item_vectors, dtype=np.float64)
        if items.shape[0] != n_items:
            raise DataError(f"external table has {items.shape[0]} items, catalog has {n_items}")
        keys = sorted(set(user_keys) | set(external.user_vectors))
        users = np.stack([external.user_vectors[u] if u in external.user_vectors
                          else init_user_from_history(histories.get(u, ()), items) for u in keys])
        if users.shape[1] != items.shape[1]:
            raise ConfigurationError("external user and item embeddings differ in dimension")
        return EmbeddingSource("external", Tensor(items), Tensor(users), {u: i for i, u in enumerate(keys)})
    raise ConfigurationError(f"unknown embedding kind {kind!r}; expected one of {KINDS}")
