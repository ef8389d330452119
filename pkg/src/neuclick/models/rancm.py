"""RANCM: an autoregressive pick-or-halt click model over one slate at a time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datamodel import PaddedBatch
from ..diffmath import Rng, Tensor, gru_cell, init_gru, linear, no_grad, ops
from ..errors import ConfigurationError, DataError, UnsupportedDatasetError
from .base import ForwardOutput, ResponseModel


@dataclass
class Rollout:
    clicks: np.ndarray              # [L] 0/1
    order: list[int]                # positions in pick order
    step_probs: list[np.ndarray]    # per step: distribution over L items + halt (last entry)


@dataclass
class SlateView:
    """Valid slates of a batch laid out as rows."""

    rows: np.ndarray                # batch row of each slate [S]
    item_ids: np.ndarray            # [S, L], -1 padded
    orders: list[list[int]] | None  # observed click order per slate, None when any is unknown

    @property
    def valid(self) -> np.ndarray:
        return self.item_ids >= 0


def slate_view(batch: PaddedBatch) -> SlateView:
    idx = batch.slate_gather()
    bs, ks = np.nonzero(idx[:, :, 0] >= 0)
    sel = idx[bs, ks]
    present = sel >= 0
    safe = np.where(present, sel, 0)
    ids = np.where(present, batch.item_ids.reshape(-1)[safe], -1)
    orders = None
    if batch.order_known is not None and batch.order_known.reshape(-1)[sel[:, 0]].all():
        ranks = np.where(present, batch.click_rank.reshape(-1)[safe], -1)
        orders = []
        for r in ranks:
            pos = np.nonzero(r >= 0)[0]
            orders.append(pos[np.argsort(r[pos])].tolist())
    return SlateView(bs, ids, orders)


class RANCM(ResponseModel):
    """GRU proposes a query vector; scores are <q, e_i> for unclicked items plus <q, e_halt>."""

    kind = "RANCM"
    needs_click_order = True
    history_free = True

    def _build(self, rng: Rng) -> None:
        self._linear("user_proj", self.d_emb, self.d_hidden, rng)
        init_gru(self.params, "gru", self.d_emb, self.d_hidden, rng)
        self._linear("query", self.d_hidden, self.d_emb, rng)
        self._vector("halt", rng.normal(0.0, 0.1, self.d_emb))

    # -- pieces --------------------------------------------------------------

    def _scores(self, h: Tensor, items: Tensor) -> Tensor:
        """``[S, L + 1]``: item scores then the halt score."""
        s = h.shape[0]
        q = linear(h, self.params, "query")
        item_scores = ops.reshape(ops.matmul(items, ops.reshape(q, (s, self.d_emb, 1))), items.shape[:2])
        halt = ops.matmul(q, ops.reshape(self.params["halt"], (self.d_emb, 1)))
        return ops.concat([item_scores, halt], axis=1)

    def _inputs(self, view: SlateView, batch: PaddedBatch) -> tuple[Tensor, Tensor]:
        users = ops.embedding_lookup(self._users(batch), view.rows)
        return linear(users, self.params, "user_proj"), self.embeddings.items(view.item_ids)

    def _check_orders(self, view: SlateView) -> list[list[int]]:
        if view.orders is None:
            raise UnsupportedDatasetError("RANCM needs observed click order on every slate")
        return view.orders

    # -- training objective ----------------------------------------------------

    def slate_nll(self, batch: PaddedBatch) -> Tensor:
        """Teacher-forced pick-sequence NLL per slate ``[S]``."""
        view = slate_view(batch)
        orders = self._check_orders(view)
        h, items = self._inputs(view, batch)
        s, l = view.item_ids.shape
        lens = np.array([len(o) for o in orders])
        avail = view.valid.copy()
        x = Tensor(np.zeros((s, self.d_emb)))
        total = Tensor(np.zeros(s))
        rows = np.arange(s)
        for j in range(int(lens.max()) + 1):
            active = lens >= j
            h = gru_cell(x, h, self.params)
            allowed = np.concatenate([avail, np.ones((s, 1), bool)], axis=1)
            logp = ops.masked_log_softmax(self._scores(h, items), allowed, axis=1)
            target = np.array([o[j] if j < len(o) else l for o in orders])
            onehot = np.zeros((s, l + 1))
            onehot[rows[active], target[active]] = 1.0
            total = ops.add(total, ops.sum(ops.mul(logp, onehot), axis=1))
            picked = lens > j
            avail[rows[picked], target[picked]] = False
            safe = np.where(picked, target, 0)
            x = ops.mul(ops.index(items, (rows, safe)), picked[:, None].astype(np.float64))
        return ops.neg(total)

    def loss(self, batch, feedback=None, *, train=True, rng=None) -> Tensor:
        return ops.mean(self.slate_nll(batch))

    # -- generation --------------------------------------------------------------

    def _rollout_rows(self, h: Tensor, items: Tensor, valid: np.ndarray, mode: str, rng: Rng | None) -> list[Rollout]:
        if mode not in ("sample", "greedy"):
            raise ConfigurationError(f"rollout mode must be sample or greedy, got {mode!r}")
        if mode == "sample" and rng is None:
            raise ConfigurationError("sampled rollouts need an rng")
        s, l = valid.shape
        out = [Rollout(np.zeros(l), [], []) for _ in range(s)]
        avail = valid.copy()
        done = np.zeros(s, bool)
        x = Tensor(np.zeros((s, self.d_emb)))
        rows = np.arange(s)
        with no_grad():
            for _ in range(l + 1):
                done |= ~avail.any(axis=1)        # every item clicked: forced halt
                if done.all():
                    break
                h = gru_cell(x, h, self.params)
                allowed = np.concatenate([avail, np.ones((s, 1), bool)], axis=1)
                scores = self._scores(h, items)
                probs = ops.masked_softmax(scores, allowed, axis=1).data
                if mode == "greedy":
                    pick = np.argmax(np.where(allowed, scores.data, -np.inf), axis=1)
                else:
                    pick = rng.categorical(probs)
                clicked = ~done & (pick < l)
                for r in np.nonzero(~done)[0]:
                    out[r].step_probs.append(probs[r])
                    if pick[r] < l:
                        out[r].order.append(int(pick[r]))
                        out[r].clicks[pick[r]] = 1.0
                done |= pick == l
                avail[rows[clicked], pick[clicked]] = False
                safe = np.where(clicked, pick, 0)
                x = Tensor(items.data[rows, safe] * clicked[:, None])
        return out

    def rollout(self, user_vector, item_ids, mode: str = "sample", rng: Rng | None = None) -> Rollout:
        """One slate, one user vector ``[d_emb]``."""
        ids = np.asarray(item_ids, dtype=np.int64)
        if ids.size == 0:
            raise DataError("cannot roll out an empty slate")
        u = Tensor(np.asarray(user_vector.data if isinstance(user_vector, Tensor) else user_vector,
                              dtype=np.float64).reshape(1, -1))
        with no_grad():
            h = linear(u, self.params, "user_proj")
            items = self.embeddings.items(ids[None, :])
        return self._rollout_rows(h, items, ids[None, :] >= 0, mode, rng)[0]

    def rollout_many(self, user_vector, item_ids, n: int, mode: str = "sample",
                     rng: Rng | None = None) -> list[Rollout]:
        """``n`` independent rollouts of one slate, run as one batch."""
        ids = np.asarray(item_ids, dtype=np.int64)
        if ids.size == 0:
            raise DataError("cannot roll out an empty slate")
        u = np.asarray(user_vector.data if isinstance(user_vector, Tensor) else user_vector, dtype=np.float64)
        with no_grad():
            h = linear(Tensor(np.tile(u.reshape(1, -1), (n, 1))), self.params, "user_proj")
            items = self.embeddings.items(np.tile(ids, (n, 1)))
        return self._rollout_rows(h, items, np.ones((n, len(ids)), bool), mode, rng)

    def step_distribution(self, user_vector, item_ids, prefix) -> np.ndarray:
        """Next-pick distribution (items then halt) after the picks in ``prefix``."""
        ids = np.asarray(item_ids, dtype=np.int64)
        with no_grad():
            h = linear(Tensor(np.asarray(user_vector, dtype=np.float64).reshape(1, -1)), self.params, "user_proj")
            items = self.embeddings.items(ids[None, :])
            avail = np.ones((1, len(ids)), bool)
            x = Tensor(np.zeros((1, self.d_emb)))
            for j in range(len(prefix) + 1):
                h = gru_cell(x, h, self.params)
                if j == len(prefix):
                    break
                avail[0, prefix[j]] = False
                x = Tensor(items.data[:, prefix[j]])
            allowed = np.concatenate([avail, [[True]]], axis=1)
            return ops.masked_softmax(self._scores(h, items), allowed, axis=1).data[0]

    def rollouts_for_batch(self, batch: PaddedBatch, n: int, mode: str = "sample",
                           rng: Rng | None = None) -> tuple[SlateView, list[list[Rollout]]]:
        view = slate_view(batch)
        with no_grad():
            h, items = self._inputs(view, batch)
        s = len(view.rows)
        rep = np.tile(np.arange(s), n)
        flat = self._rollout_rows(Tensor(h.data[rep]), Tensor(items.data[rep]), view.valid[rep], mode, rng)
        return view, [flat[i::s] for i in range(s)]

    def forward(self, batch, feedback=None, *, train=False, rng=None) -> ForwardOutput:
        """Smoothed Monte-Carlo click marginals (k + 0.5) / (n + 1), returned as logits."""
        n = self.config.rancm_rollouts
        rng = rng or Rng(self.seed).child("rancm-rollouts")
        view, runs = self.rollouts_for_batch(batch, n, "sample", rng)
        s, l = view.item_ids.shape
        marg = np.array([(sum(r.clicks for r in rs) + 0.5) / (n + 1) for rs in runs]).reshape(s, l)
        idx = batch.slate_gather()
        probs = np.full(batch.item_ids.shape, 0.5)
        k = idx.shape[1]
        flat_marg = np.full((batch.size * k, l), 0.5)
        flat_marg[view.rows * k + self._slate_numbers(view, batch)] = marg
        sc = batch.slate_scatter()
        probs[sc >= 0] = flat_marg.reshape(-1)[sc[sc >= 0]]
        return ForwardOutput(Tensor(np.log(probs) - np.log1p(-probs)))

    @staticmethod
    def _slate_numbers(view: SlateView, batch: PaddedBatch) -> np.ndarray:
        idx = batch.slate_gather()
        return np.nonzero(idx[:, :, 0] >= 0)[1]
