"""Transformer-based models: slate/session baselines, SCOT, and Transformer+GRU."""

from __future__ import annotations

import numpy as np

from ..datamodel import PaddedBatch
from ..diffmath import Rng, Tensor, encoder, gru_cell, init_encoder, init_gru, linear, ops
from ..discretize import discretize
from .base import Feedback, ForwardOutput, ResponseModel, gather_slates, scatter_slates, slate_token_mask


class _TransformerModel(ResponseModel):
    """User/state token plus item tokens (item projection + learned per-slate positions)."""

    def _build(self, rng: Rng) -> None:
        d = self.d_hidden
        self._linear("user_proj", self.d_emb, d, rng)
        self._linear("item_proj", self.d_emb, d, rng)
        self._position_table(rng, d)
        init_encoder(self.params, "enc", d, self.config.n_layers, self.config.ff_width, rng)
        self._linear("head", d, 1, rng)

    def _encode(self, x: Tensor, mask: np.ndarray, train: bool, rng: Rng | None) -> Tensor:
        c = self.config
        return encoder(x, mask, self.params, "enc", c.n_layers, c.n_heads,
                       dropout=c.dropout if train else 0.0, rng=rng, train=train)

    def _user_token(self, batch: PaddedBatch) -> Tensor:
        return linear(self._users(batch), self.params, "user_proj")

    def _item_tokens(self, batch: PaddedBatch) -> Tensor:
        return ops.add(linear(self._items(batch), self.params, "item_proj"), self._positions(batch))

    def _head(self, out: Tensor) -> Tensor:
        """``[..., D]`` -> ``[...]`` logits."""
        y = linear(out, self.params, "head")
        return ops.reshape(y, y.shape[:-1])

    def _slate_pass(self, lead: Tensor, items: Tensor, valid: np.ndarray, train, rng) -> tuple[Tensor, Tensor]:
        """Encode ``[lead] + items`` per row; returns (item logits [N, L], item outputs [N, L, D])."""
        n, l, d = items.shape
        x = ops.concat([ops.reshape(lead, (n, 1, d)), items], axis=1)
        out = self._encode(x, slate_token_mask(valid), train, rng)
        item_out = ops.index(out, (slice(None), slice(1, None)))
        return self._head(item_out), item_out


class SlateTransformer(_TransformerModel):
    """Every slate encoded independently with the user token prepended."""

    kind = "SlateTransformer"
    history_free = True

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        tokens, valid = gather_slates(self._item_tokens(batch), batch)
        k = batch.slate_gather().shape[1]
        d = self.d_hidden
        user = ops.reshape(ops.broadcast_to(ops.reshape(self._user_token(batch), (batch.size, 1, d)),
                                            (batch.size, k, d)), (batch.size * k, d))
        logits, _ = self._slate_pass(user, tokens, valid, train, rng)
        return ForwardOutput(scatter_slates(logits, batch))


def session_mask(batch: PaddedBatch) -> np.ndarray:
    """``[B, 1+T, 1+T]``: user token sees itself; item i sees the user and items in slates <= its own."""
    b, t = batch.item_ids.shape
    m = np.zeros((b, t + 1, t + 1), bool)
    m[:, 0, 0] = True
    m[:, 1:, 0] = batch.mask
    si = batch.slate_index
    m[:, 1:, 1:] = batch.mask[:, :, None] & batch.mask[:, None, :] & (si[:, None, :] <= si[:, :, None])
    return m


class SessionTransformer(_TransformerModel):
    """One encoder over the flattened session with a causal-by-slate mask."""

    kind = "SessionTransformer"

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        d = self.d_hidden
        x = ops.concat([ops.reshape(self._user_token(batch), (batch.size, 1, d)), self._item_tokens(batch)], axis=1)
        out = self._encode(x, session_mask(batch), train, rng)
        return ForwardOutput(self._head(ops.index(out, (slice(None), slice(1, None)))))


class SCOT(_TransformerModel):
    """Session transformer whose history holds only clicked items.

    Sequence: [user] + clicked tokens + one query token per impression.  A
    query in slate k sees itself, the user, and clicked tokens from slates < k;
    a clicked token sees the user and clicked tokens from slates <= its own.
    """

    kind = "SCOT"
    uses_feedback = True

    def _build(self, rng: Rng) -> None:
        super()._build(rng)
        self._vector("clicked_type", rng.normal(0.0, 0.02, self.d_hidden))
        self._vector("query_type", rng.normal(0.0, 0.02, self.d_hidden))

    def _logits_given(self, batch: PaddedBatch, clicked: np.ndarray, train, rng) -> Tensor:
        b, t, d = batch.size, batch.length, self.d_hidden
        base = self._item_tokens(batch)
        queries = ops.add(base, self.params["query_type"])
        history = ops.add(base, self.params["clicked_type"])
        clicked = (clicked > 0.5) & batch.mask
        counts = clicked.sum(axis=1)
        c = int(counts.max()) if b else 0
        hidx = -np.ones((b, c), np.int64)
        hslate = -np.ones((b, c), np.int64)
        for row in range(b):
            cols = np.nonzero(clicked[row])[0]
            hidx[row, :len(cols)] = row * t + cols
            hslate[row, :len(cols)] = batch.slate_index[row, cols]
        hvalid = hidx >= 0
        hist = ops.embedding_lookup(ops.reshape(history, (b * t, d)), hidx)
        x = ops.concat([ops.reshape(self._user_token(batch), (b, 1, d)), hist, queries], axis=1)

        n = 1 + c + t
        m = np.zeros((b, n, n), bool)
        m[:, 0, 0] = True
        hs = slice(1, 1 + c)
        m[:, hs, 0] = hvalid
        m[:, hs, hs] = hvalid[:, :, None] & hvalid[:, None, :] & (hslate[:, None, :] <= hslate[:, :, None])
        qs = slice(1 + c, n)
        m[:, qs, 0] = batch.mask
        m[:, qs, hs] = batch.mask[:, :, None] & hvalid[:, None, :] & (hslate[:, None, :] < batch.slate_index[:, :, None])
        diag = np.arange(t)
        m[:, 1 + c + diag, 1 + c + diag] = batch.mask
        out = self._encode(x, m, train, rng)
        return self._head(ops.index(out, (slice(None), qs)))

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        fb = feedback or self.inference_feedback()
        if fb.mode == "teacher":
            return ForwardOutput(self._logits_given(batch, batch.clicks, train, rng), Tensor(batch.clicks))
        # grow the clicked-token history slate by slate from the model's own decisions
        decisions = np.zeros(batch.item_ids.shape)
        logits = None
        strategy = "sample" if fb.mode == "gumbel" else fb.mode
        for k in range(int(batch.n_slates.max())):
            lg = self._logits_given(batch, decisions, train, rng)
            sel = batch.mask & (batch.slate_index == k)
            logits = lg if logits is None else ops.where(sel, lg, logits)
            probs = 1.0 / (1.0 + np.exp(-lg.data))
            d = discretize(probs, strategy, fb.rng, threshold=fb.threshold).data
            if fb.teacher_mask is not None:
                d = np.where(fb.teacher_mask, batch.clicks, d)
            decisions = np.where(sel, d, decisions)
        return ForwardOutput(logits, Tensor(decisions))


class TransformerGRU(_TransformerModel):
    """Per-slate encoder over [state token] + items; the mean item output updates the state by GRU."""

    kind = "TransformerGRU"

    def _build(self, rng: Rng) -> None:
        super()._build(rng)
        init_gru(self.params, "state_gru", self.d_hidden, self.d_hidden, rng)

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        d = self.d_hidden
        b = batch.size
        tokens, valid = gather_slates(self._item_tokens(batch), batch)
        k, l = batch.slate_gather().shape[1:]
        tokens = ops.reshape(tokens, (b, k, l, d))
        valid = valid.reshape(b, k, l)
        state = self._user_token(batch)
        per_slate = []
        for j in range(k):
            items = ops.index(tokens, (slice(None), j))
            logits, out = self._slate_pass(state, items, valid[:, j], train, rng)
            per_slate.append(logits)
            if j + 1 < k:
                agg = ops.masked_mean(out, valid[:, j], axis=1)
                nxt = gru_cell(agg, state, self.params, "state_gru")
                live = valid[:, j].any(axis=1)
                state = nxt if live.all() else ops.where(live[:, None], nxt, state)
        stacked = ops.reshape(ops.stack(per_slate, axis=1), (b * k, l))
        return ForwardOutput(scatter_slates(stacked, batch))
