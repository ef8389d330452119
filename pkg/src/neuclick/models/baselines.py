"""Order-free baselines: dot-product MF and logistic regression."""

from __future__ import annotations

from ..datamodel import PaddedBatch
from ..diffmath import Rng, ops
from .base import Feedback, ForwardOutput, ResponseModel


class MF(ResponseModel):
    """p = sigmoid(<u, e_i>); no parameters of its own."""

    kind = "MF"
    history_free = True

    def _build(self, rng: Rng) -> None:
        pass

    def forward(self, batch: PaddedBatch, feedback: Feedback | None = None, *, train=False, rng=None) -> ForwardOutput:
        u = self._users(batch)
        e = self._items(batch)
        return ForwardOutput(ops.sum(ops.mul(e, ops.reshape(u, (batch.size, 1, self.d_emb))), axis=-1))


class LogReg(MF):
    """p = sigmoid(W [u || e_i] + b), positionless and order-free."""

    kind = "LogReg"

    def _build(self, rng: Rng) -> None:
        self._linear("logreg", 2 * self.d_emb, 1, rng)

    def forward(self, batch: PaddedBatch, feedback: Feedback | None = None, *, train=False, rng=None) -> ForwardOutput:
        b, t, d = batch.size, batch.length, self.d_emb
        u = ops.broadcast_to(ops.reshape(self._users(batch), (b, 1, d)), (b, t, d))
        x = ops.concat([u, self._items(batch)], axis=-1)
        logit = ops.add(ops.matmul(x, self.params["logreg.weight"]), self.params["logreg.bias"])
        return ForwardOutput(ops.reshape(logit, (b, t)))
