"""The shared response-model contract and helpers used by every architecture."""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from ..config import ModelConfig
from ..datamodel import PaddedBatch
from ..diffmath import Params, Rng, Tensor, bce_with_logits, init_linear, linear, no_grad, ops, parameter
from ..discretize import discretize
from ..embeddings import EmbeddingSource
from ..errors import ConfigurationError, DimensionError


@dataclass
class Feedback:
    """How a model's own click decisions are formed inside a forward pass.

    ``mode`` teacher uses ``batch.clicks``; threshold/sample/gumbel discretize
    the model's predictions.  ``teacher_mask`` forces observed labels at the
    marked impressions regardless of mode.
    """

    mode: str = "threshold"
    rng: Rng | None = None
    tau: float = 1.0
    threshold: float = 0.5
    teacher_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("teacher", "threshold", "sample", "gumbel"):
            raise ConfigurationError(f"unknown feedback mode {self.mode!r}")


TEACHER = Feedback("teacher")


@dataclass
class ForwardOutput:
    logits: Tensor                    # [B, T]
    decisions: Tensor | None = None   # [B, T] clicks fed back (feedback models only)

    @property
    def probs(self) -> np.ndarray:
        from scipy.special import expit
        return expit(self.logits.data)


class ResponseModel:
    """(user vector, session batch) -> per-impression click probabilities."""

    kind: ClassVar[str] = ""
    uses_feedback: ClassVar[bool] = False
    needs_click_order: ClassVar[bool] = False
    history_free: ClassVar[bool] = False   # outputs ignore other slates entirely
    init_family: ClassVar[str] = ""         # share initial weights with another kind

    def __init__(self, config: ModelConfig, embeddings: EmbeddingSource, seed: int = 0):
        if config.kind != self.kind:
            raise ConfigurationError(f"{type(self).__name__} built from a {config.kind} config")
        self.config = config
        self.embeddings = embeddings
        self.seed = seed
        self.params: Params = {}
        self._build(Rng(seed).child(f"init:{self.init_family or self.kind}"))

    # -- construction helpers ------------------------------------------------

    @property
    def d_emb(self) -> int:
        return self.embeddings.dim

    @property
    def d_hidden(self) -> int:
        return self.config.d_hidden

    def _build(self, rng: Rng) -> None:
        raise NotImplementedError

    def _linear(self, prefix: str, d_in: int, d_out: int, rng: Rng, bias: bool = True) -> None:
        init_linear(self.params, prefix, d_in, d_out, rng, bias)

    def _vector(self, name: str, values: np.ndarray) -> None:
        self.params[name] = parameter(values, name)

    # -- contract --------------------------------------------------------------

    def parameters(self) -> Params:
        """Everything the supervised optimizer updates (embeddings included when learnable)."""
        return {**self.params, **self.embeddings.parameters()}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    def forward(self, batch: PaddedBatch, feedback: Feedback | None = None, *,
                train: bool = False, rng: Rng | None = None) -> ForwardOutput:
        raise NotImplementedError

    def loss(self, batch: PaddedBatch, feedback: Feedback | None = None, *,
             train: bool = True, rng: Rng | None = None) -> Tensor:
        out = self.forward(batch, feedback or TEACHER, train=train, rng=rng)
        return bce_with_logits(out.logits, batch.clicks, batch.mask)

    def inference_feedback(self, rng: Rng | None = None) -> Feedback:
        mode = self.config.feedback
        if mode != "threshold" and rng is None:
            rng = Rng(self.seed).child("inference")
        return Feedback(mode, rng=rng, tau=1.0, threshold=self.config.threshold)

    def predict(self, batch: PaddedBatch, rng: Rng | None = None) -> np.ndarray:
        """Click probabilities at inference (own decisions fed back); padding reads 0."""
        with no_grad():
            out = self.forward(batch, self.inference_feedback(rng), train=False, rng=rng)
        return np.where(batch.mask, out.probs, 0.0)

    # -- shared pieces -----------------------------------------------------------

    def _users(self, batch: PaddedBatch) -> Tensor:
        return self.embeddings.users(list(batch.user_ids))

    def _items(self, batch: PaddedBatch) -> Tensor:
        return self.embeddings.items(batch.item_ids)

    def _dropout(self, x: Tensor, train: bool, rng: Rng | None) -> Tensor:
        if not train or self.config.dropout <= 0:
            return x
        if rng is None:
            raise ConfigurationError("training-mode dropout needs an rng")
        return ops.dropout(x, self.config.dropout, rng, True)

    def _check_slate_len(self, batch: PaddedBatch) -> None:
        if batch.max_slate_len > self.config.max_slate_len:
            raise DimensionError(
                f"slate length {batch.max_slate_len} exceeds max_slate_len={self.config.max_slate_len} (axis 1)"
            )

    def _position_table(self, rng: Rng, d: int, name: str = "pos") -> None:
        self._vector(name, rng.normal(0.0, 0.02, (self.config.max_slate_len, d)))

    def _positions(self, batch: PaddedBatch, name: str = "pos") -> Tensor:
        self._check_slate_len(batch)
        return ops.embedding_lookup(self.params[name], np.where(batch.mask, batch.positions, -1))


def decide(logit_t: Tensor, labels_t: np.ndarray, feedback: Feedback, forced: np.ndarray | None) -> Tensor:
    """Click decision for one step ([B] logits) under ``feedback``."""
    if feedback.mode == "teacher":
        return Tensor(labels_t)
    p = ops.sigmoid(logit_t)
    d = discretize(p, feedback.mode, feedback.rng, feedback.tau, threshold=feedback.threshold, logits=logit_t)
    if forced is not None and forced.any():
        d = ops.where(forced, labels_t, d)
    return d


def gather_slates(x: Tensor, batch: PaddedBatch) -> tuple[Tensor, np.ndarray]:
    """``[B, T, d]`` -> ``[B*K, L, d]`` per-slate rows plus their validity mask."""
    idx = batch.slate_gather()
    b, k, l = idx.shape
    flat = ops.reshape(x, (batch.size * batch.length, x.shape[-1]))
    g = ops.embedding_lookup(flat, idx.reshape(b * k, l))
    return g, idx.reshape(b * k, l) >= 0


def scatter_slates(y: Tensor, batch: PaddedBatch) -> Tensor:
    """Inverse of :func:`gather_slates` for a per-token scalar ``[B*K, L]`` -> ``[B, T]``."""
    flat = ops.reshape(y, (y.size, 1))
    return ops.reshape(ops.embedding_lookup(flat, batch.slate_scatter()), batch.item_ids.shape)


def slate_token_mask(valid: np.ndarray) -> np.ndarray:
    """Attention mask for ``[state/user token] + slate items`` rows.

    The leading token attends only to itself (so it stays a pure function of
    the user or state); items attend to the leading token and every valid item.
    """
    n, l = valid.shape
    m = np.zeros((n, l + 1, l + 1), bool)
    m[:, 0, 0] = True
    m[:, 1:, 0] = valid
    m[:, 1:, 1:] = valid[:, :, None] & valid[:, None, :]
    return m
