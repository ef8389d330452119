"""Serve a trained model as a user-response function, in process or over stdin/stdout."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .datamodel import MAX_SESSION_LEN, Session, Slate, build_batch
from .diffmath import Rng, no_grad
from .errors import CatalogError, ConfigurationError, DataError, NeuclickError
from .models import Feedback, ResponseModel

log = logging.getLogger(__name__)


@dataclass
class Response:
    clicks: list[int]
    probs: list[float]
    click_order: list[int] | None = None

    def to_dict(self) -> dict:
        d = {"clicks": self.clicks, "probs": self.probs}
        if self.click_order is not None:
            d["click_order"] = self.click_order
        return d


@dataclass
class SimStats:
    slates: int = 0
    clicks: int = 0
    empty_slates: int = 0
    early_halts: int = 0      # RANCM stopped with unclicked items left

    def to_dict(self) -> dict:
        n = max(self.slates, 1)
        return {"slates": self.slates, "mean_clicks_per_slate": self.clicks / n,
                "empty_rate": self.empty_slates / n, "early_halt_rate": self.early_halts / n}


@dataclass
class SimSession:
    user_id: str
    model: ResponseModel
    rng: Rng
    history: list[Slate] = field(default_factory=list)
    stats: SimStats = field(default_factory=SimStats)
    max_len: int = MAX_SESSION_LEN

    def clicked_items(self) -> list[int]:
        return [i for sl in self.history for i, c in zip(sl.items, sl.clicks) if c]


def reset(model: ResponseModel, user_id: str, seed: int = 0, max_len: int = MAX_SESSION_LEN) -> SimSession:
    """Fresh session: empty history, deterministic stream from ``seed``."""
    return SimSession(str(user_id), model, Rng(seed), max_len=max_len)


def _check_slate(session: SimSession, items: Sequence[int]) -> list[int]:
    items = [int(i) for i in items]
    if not items:
        raise DataError("cannot respond to an empty slate")
    n = session.model.embeddings.n_items
    bad = [i for i in items if not 0 <= i < n]
    if bad:
        raise CatalogError(f"items {bad} outside catalog of {n}")
    if len(set(items)) != len(items):
        raise DataError("slate lists an item twice")
    return items


def respond(session: SimSession, items: Sequence[int], mode: str = "sample") -> Response:
    """Clicks on one slate given the session so far; appends the slate to the history."""
    if mode not in ("sample", "greedy"):
        raise ConfigurationError(f"respond mode must be sample or greedy, got {mode!r}")
    items = _check_slate(session, items)
    model = session.model
    if model.kind == "RANCM":
        user = model.embeddings.users([session.user_id], {session.user_id: session.clicked_items()}).data[0]
        run = model.rollout(user, items, mode, session.rng)
        marg = [r.clicks for r in model.rollout_many(user, items, model.config.rancm_rollouts, "sample", session.rng)]
        probs = ((np.sum(marg, axis=0) + 0.5) / (len(marg) + 1)).tolist()
        clicks = run.clicks.astype(int).tolist()
        order = list(run.order)
        if len(order) < len(items):
            session.stats.early_halts += 1
        _record(session, items, clicks, order)
        return Response(clicks, probs, order)

    slates = session.history + [Slate.from_lists(items, [0] * len(items))]
    batch = build_batch([Session(session.user_id, tuple(slates), "sim")], session.max_len)
    live = batch.mask[0]
    new = live & (batch.slate_index[0] == batch.slate_index[0][live].max())
    with no_grad():
        if model.uses_feedback:
            # history positions replay the emitted clicks; the new slate uses the model's own decisions
            fb = Feedback("sample" if mode == "sample" else "threshold", rng=session.rng,
                          threshold=model.config.threshold, teacher_mask=(batch.mask & ~new[None, :]))
            out = model.forward(batch, fb)
            decisions = out.decisions.data[0][new]
        else:
            out = model.forward(batch)
            p = out.probs[0][new]
            decisions = session.rng.bernoulli(p) if mode == "sample" else (p > 0.5).astype(float)
    probs = out.probs[0][new].tolist()
    clicks = decisions.astype(int).tolist()
    _record(session, items, clicks, None)
    return Response(clicks, probs)


def _record(session: SimSession, items, clicks, order) -> None:
    session.history.append(Slate.from_lists(items, clicks, order if order is not None
                                            else [p for p, c in enumerate(clicks) if c]))
    session.stats.slates += 1
    session.stats.clicks += sum(clicks)
    session.stats.empty_slates += int(sum(clicks) == 0)


def serve(model: ResponseModel, stdin: IO[str], stdout: IO[str], seed: int = 0,
          max_len: int = MAX_SESSION_LEN) -> SimStats:
    """Line protocol: one JSON request per line, one JSON response per line.

    ``{"op": "reset", "user_id": ..., "seed"?: int}`` -> ``{"ok": true, "user_id": ...}``
    ``{"op": "respond", "items": [...], "mode"?: "sample"|"greedy", "user_id"?: ...}``
        -> ``{"clicks": [...], "probs": [...], "click_order"?: [...]}``
    ``{"op": "stats"}`` -> running statistics of the current session.
    Failures answer ``{"error": {"type": ..., "message": ...}}`` and keep serving.
    """
    session: SimSession | None = None
    totals = SimStats()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise DataError("request must be a JSON object")
            op = req.get("op")
            if op == "reset":
                if "user_id" not in req:
                    raise DataError("reset needs user_id")
                session = reset(model, req["user_id"], int(req.get("seed", seed)), max_len)
                reply = {"ok": True, "user_id": session.user_id}
            elif op == "respond":
                if session is None or ("user_id" in req and str(req["user_id"]) != session.user_id):
                    if "user_id" not in req:
                        raise DataError("respond before reset")
                    session = reset(model, req["user_id"], seed, max_len)
                before = session.stats.slates, session.stats.clicks, session.stats.empty_slates, session.stats.early_halts
                reply = respond(session, req.get("items", []), req.get("mode", "sample")).to_dict()
                totals.slates += session.stats.slates - before[0]
                totals.clicks += session.stats.clicks - before[1]
                totals.empty_slates += session.stats.empty_slates - before[2]
                totals.early_halts += session.stats.early_halts - before[3]
            elif op == "stats":
                reply = (session.stats if session else SimStats()).to_dict()
            else:
                raise DataError(f"unknown op {op!r}")
        except json.JSONDecodeError as exc:
            reply = {"error": {"type": "ParseError", "message": str(exc)}}
        except NeuclickError as exc:
            reply = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
    return totals
