"""GRU-based models: session/slate baselines, NCM with readout, and AdvNCM."""

from __future__ import annotations

import numpy as np

from ..datamodel import PaddedBatch
from ..diffmath import Params, Rng, Tensor, gru_cell, init_gru, init_linear, linear, ops, parameter
from .base import TEACHER, Feedback, ForwardOutput, ResponseModel, decide


def _steps(x: Tensor) -> list[Tensor]:
    """Split ``[B, T, d]`` into T tensors of ``[B, d]``."""
    xt = ops.transpose(x, (1, 0, 2))
    return [ops.index(xt, t) for t in range(x.shape[1])]


def _stack_logits(logits: list[Tensor], batch: PaddedBatch) -> Tensor:
    return ops.reshape(ops.stack(logits, axis=1), (batch.size, batch.length))


class _GRUModel(ResponseModel):
    """Shared layout: h0 = user_proj(u); gru over inputs; head(h_t) -> logit."""

    def _input_width(self) -> int:
        return self.d_emb

    def _build(self, rng: Rng) -> None:
        self._linear("user_proj", self.d_emb, self.d_hidden, rng)
        init_gru(self.params, "gru", self._input_width(), self.d_hidden, rng)
        self._linear("head", self.d_hidden, 1, rng)
        if self.config.positional:
            self._position_table(rng, self.d_emb)

    def _h0(self, batch: PaddedBatch) -> Tensor:
        return linear(self._users(batch), self.params, "user_proj")

    def _item_inputs(self, batch: PaddedBatch) -> Tensor:
        e = self._items(batch)
        if self.config.positional:
            e = ops.add(e, self._positions(batch))
        return e


class SessionGRU(_GRUModel):
    """One GRU step per impression over the flattened session (slate-blind)."""

    kind = "SessionGRU"

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        h = self._h0(batch)
        logits = []
        for x in _steps(self._item_inputs(batch)):
            h = gru_cell(self._dropout(x, train, rng), h, self.params)
            logits.append(linear(h, self.params, "head"))
        return ForwardOutput(_stack_logits(logits, batch))


class SlateGRU(_GRUModel):
    """GRU restarted from h0 at every slate boundary."""

    kind = "SlateGRU"
    history_free = True

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        h0 = self._h0(batch)
        h = h0
        starts = batch.slate_start
        logits = []
        for t, x in enumerate(_steps(self._item_inputs(batch))):
            if t > 0 and starts[:, t].any():
                h = ops.where(starts[:, t, None], h0, h)
            h = gru_cell(self._dropout(x, train, rng), h, self.params)
            logits.append(linear(h, self.params, "head"))
        return ForwardOutput(_stack_logits(logits, batch))


class AggSlateGRU(_GRUModel):
    """Like SlateGRU, but slate k+1 starts from the mean hidden state of slate k."""

    kind = "AggSlateGRU"

    @staticmethod
    def carry(hidden: Tensor, mask: np.ndarray) -> Tensor:
        """Mean of ``[B, L, d]`` hidden states over valid steps."""
        return ops.masked_mean(hidden, mask, axis=1)

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        h = self._h0(batch)
        starts = batch.slate_start
        acc = Tensor(np.zeros(h.shape))
        count = np.zeros(batch.size)
        logits = []
        for t, x in enumerate(_steps(self._item_inputs(batch))):
            s = starts[:, t]
            if t > 0 and s.any():
                mean = ops.div(acc, np.maximum(count, 1.0)[:, None])
                h = ops.where(s[:, None], mean, h)
                acc = ops.where(s[:, None], 0.0, acc)
                count = np.where(s, 0.0, count)
            h = gru_cell(self._dropout(x, train, rng), h, self.params)
            m = batch.mask[:, t].astype(np.float64)
            acc = ops.add(acc, ops.mul(h, m[:, None]))
            count = count + m
            logits.append(linear(h, self.params, "head"))
        return ForwardOutput(_stack_logits(logits, batch))


class NCM(_GRUModel):
    """Session GRU whose input at t is [e_t || r_t] with readout r_t.

    r_t = e_{t-1} if the click decision at t-1 is 1, else zeros; r is zero
    at the first impression of every slate (readout resets per slate).
    """

    kind = "NCM"
    uses_feedback = True

    def _input_width(self) -> int:
        return 2 * self.d_emb

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        fb = feedback or self.inference_feedback()
        if fb.mode == "teacher":
            fb = TEACHER
        raw = _steps(self._items(batch))
        inputs = _steps(self._item_inputs(batch)) if self.config.positional else raw
        not_start = (~batch.slate_start).astype(np.float64)
        h = self._h0(batch)
        zero = Tensor(np.zeros((batch.size, self.d_emb)))
        logits, decisions = [], []
        for t in range(batch.length):
            if t == 0:
                r = zero
            else:
                gate = ops.mul(decisions[-1], not_start[:, t])
                r = ops.mul(raw[t - 1], ops.reshape(gate, (batch.size, 1)))
            x = ops.concat([inputs[t], r], axis=-1)
            h = gru_cell(self._dropout(x, train, rng), h, self.params)
            logit = linear(h, self.params, "head")
            logits.append(logit)
            forced = None if fb.teacher_mask is None else fb.teacher_mask[:, t]
            decisions.append(decide(ops.reshape(logit, (batch.size,)), batch.clicks[:, t], fb, forced))
        return ForwardOutput(_stack_logits(logits, batch), ops.stack(decisions, axis=1))


class AdvNCM(NCM):
    """NCM generator plus a GRU discriminator over (items, clicks)."""

    kind = "AdvNCM"
    init_family = "NCM"

    def _build(self, rng: Rng) -> None:
        super()._build(rng)
        drng = rng.child("discriminator")
        self.disc_params: Params = {}
        init_linear(self.disc_params, "disc.user_proj", self.d_emb, self.d_hidden, drng)
        init_gru(self.disc_params, "disc.gru", 2 * self.d_emb, self.d_hidden, drng)
        init_linear(self.disc_params, "disc.head", self.d_hidden, 1, drng)
        self.disc_params["disc.marker"] = parameter(drng.normal(0.0, 0.1, self.d_emb), "disc.marker")

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {**super().state_arrays(), **{k: v.data for k, v in self.disc_params.items()}}

    def discriminate(self, batch: PaddedBatch, clicks) -> Tensor:
        """Real-vs-generated logit per session ``[B]``; the final valid hidden state decides."""
        p = self.disc_params
        clicks = clicks if isinstance(clicks, Tensor) else Tensor(np.asarray(clicks, dtype=np.float64))
        h = linear(self._users(batch), p, "disc.user_proj")
        items = _steps(self._items(batch))
        marker = ops.reshape(p["disc.marker"], (1, self.d_emb))
        for t in range(batch.length):
            c = ops.reshape(ops.index(clicks, (slice(None), t)), (batch.size, 1))
            x = ops.concat([items[t], ops.mul(c, marker)], axis=-1)
            h_new = gru_cell(x, h, p, "disc.gru")
            live = batch.mask[:, t]
            h = h_new if live.all() else ops.where(live[:, None], h_new, h)
        return ops.reshape(linear(h, p, "disc.head"), (batch.size,))
