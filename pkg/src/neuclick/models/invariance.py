"""The causality matrix: which inputs may not influence which outputs, per model.

Each named invariance is checked by a randomized perturb-and-compare trial:
build a two-session batch, perturb the inputs the invariance says are
irrelevant, and require the protected outputs to stay put.
"""

from __future__ import annotations

import numpy as np

from ..datamodel import PaddedBatch, Session, Slate, build_batch
from ..diffmath import Rng, no_grad
from .base import TEACHER, ResponseModel

CAUSALITY: dict[str, tuple[str, ...]] = {
    "MF": ("other_slates", "future_impressions", "item_permutation"),
    "LogReg": ("other_slates", "future_impressions", "item_permutation"),
    "SessionGRU": ("future_impressions", "later_slates"),
    "SlateGRU": ("other_slates", "future_impressions"),
    "AggSlateGRU": ("future_impressions", "later_slates"),
    "SlateTransformer": ("other_slates",),
    "SessionTransformer": ("later_slates",),
    "NCM": ("future_impressions", "later_slates"),
    "AdvNCM": ("future_impressions", "later_slates"),
    "RANCM": ("other_slates",),
    "SCOT": ("future_impressions", "later_slates", "unclicked_history"),
    "TransformerGRU": ("later_slates",),
}


def _random_session(rng: np.random.Generator, sizes, n_items: int, user: str, sid: str) -> Session:
    slates = []
    for n in sizes:
        items = rng.choice(n_items, n, replace=False).tolist()
        clicks = (rng.random(n) < 0.4).astype(int).tolist()
        slates.append(Slate.from_lists(items, clicks, [p for p, c in enumerate(clicks) if c]))
    return Session(user, tuple(slates), sid)


def _outputs(model: ResponseModel, sessions: list[Session]) -> tuple[PaddedBatch, np.ndarray]:
    batch = build_batch(sessions)
    with no_grad():
        out = model.forward(batch, TEACHER, train=False, rng=Rng(0).child("causality"))
    return batch, out.logits.data


def _perturb(session: Session, rng: np.random.Generator, n_items: int, touch) -> Session:
    """Redraw item ids and clicks at the (slate, position) pairs ``touch`` selects."""
    slates = []
    for k, sl in enumerate(session.slates):
        items, clicks = list(sl.items), list(sl.clicks)
        for p in range(len(sl)):
            what = touch(k, p, clicks[p])
            if what:
                items[p] = int(rng.integers(n_items))
                if what == "item+click":
                    clicks[p] = int(rng.integers(2))
        # keep items unique within the slate
        if len(set(items)) != len(items):
            return _perturb(session, rng, n_items, touch)
        slates.append(Slate.from_lists(items, clicks, [p for p, c in enumerate(clicks) if c]))
    return Session(session.user_id, tuple(slates), session.session_id)


def invariance_trial(model: ResponseModel, name: str, rng: np.random.Generator) -> bool:
    """One randomized trial of invariance ``name``; True when it holds."""
    n_items = model.embeddings.n_items
    l_max = min(5, model.config.max_slate_len, n_items)
    sizes = rng.integers(2, l_max + 1, size=3)
    users = model.embeddings.user_keys or ["u0"]
    a = _random_session(rng, sizes, n_items, users[0], "a")
    b = _random_session(rng, rng.integers(2, l_max + 1, size=2), n_items, users[-1], "b")
    batch, before = _outputs(model, [a, b])
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    if name == "item_permutation":
        perm = rng.permutation(len(a.slates[0]))
        sl = a.slates[0]
        shuffled = Slate.from_lists([sl.items[i] for i in perm], [sl.clicks[i] for i in perm],
                                    None)
        a2 = Session(a.user_id, (shuffled,) + a.slates[1:], a.session_id)
        _, after = _outputs(model, [a2, b])
        return np.allclose(after[0, :len(perm)], before[0, :len(perm)][perm], atol=1e-12, rtol=0)

    if name == "future_impressions":
        t = int(rng.integers(0, offsets[-1] - 1))
        touch = lambda k, p, c: "item+click" if offsets[k] + p > t else None  # noqa: E731
        keep = np.arange(t + 1)
    elif name == "later_slates":
        k0 = int(rng.integers(0, 2))
        touch = lambda k, p, c: "item+click" if k > k0 else None  # noqa: E731
        keep = np.arange(offsets[k0 + 1])
    elif name == "other_slates":
        k0 = int(rng.integers(0, 3))
        touch = lambda k, p, c: "item+click" if k != k0 else None  # noqa: E731
        keep = np.arange(offsets[k0], offsets[k0 + 1])
    elif name == "unclicked_history":
        k0 = int(rng.integers(1, 3))
        touch = lambda k, p, c: "item" if k < k0 and not c else None  # noqa: E731
        keep = np.arange(offsets[k0], offsets[-1])
    else:
        raise KeyError(f"unknown invariance {name!r}")
    a2 = _perturb(a, rng, n_items, touch)
    _, after = _outputs(model, [a2, b])
    same_a = np.allclose(after[0, keep], before[0, keep], atol=1e-12, rtol=0)
    same_b = np.allclose(after[1][batch.mask[1]], before[1][batch.mask[1]], atol=1e-12, rtol=0)
    return bool(same_a and same_b)


def count_violations(model: ResponseModel, name: str, trials: int = 100, seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    return sum(not invariance_trial(model, name, rng) for _ in range(trials))
