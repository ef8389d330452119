"""Users, items, slates, sessions, and padded batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .diffmath import Rng
from .errors import CatalogError, ConfigurationError, DataError, EmptyBatchError

MAX_SESSION_LEN = 128


@dataclass(frozen=True)
class Impression:
    item_id: int
    position: int
    clicked: int


@dataclass(frozen=True)
class Slate:
    impressions: tuple[Impression, ...]
    click_order: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.impressions) == 0:
            raise DataError("a slate must hold at least one impression")
        positions = [imp.position for imp in self.impressions]
        if positions != list(range(len(positions))):
            raise DataError(f"slate positions must be 0..{len(positions) - 1} in order, got {positions}")
        for imp in self.impressions:
            if imp.clicked not in (0, 1):
                raise DataError(f"click label must be 0 or 1, got {imp.clicked!r}")
        if self.click_order is not None:
            clicked = {imp.position for imp in self.impressions if imp.clicked}
            order = list(self.click_order)
            if len(order) != len(set(order)) or set(order) != clicked:
                raise DataError(
                    f"click_order {order} must be a permutation of the clicked positions {sorted(clicked)}"
                )

    @classmethod
    def from_lists(cls, items: Sequence[int], clicks: Sequence[int],
                   click_order: Sequence[int] | None = None) -> Slate:
        if len(items) != len(clicks):
            raise DataError(f"slate has {len(items)} items but {len(clicks)} click labels")
        imps = tuple(Impression(int(i), p, int(c)) for p, (i, c) in enumerate(zip(items, clicks)))
        return cls(imps, None if click_order is None else tuple(int(o) for o in click_order))

    @property
    def items(self) -> list[int]:
        return [imp.item_id for imp in self.impressions]

    @property
    def clicks(self) -> list[int]:
        return [imp.clicked for imp in self.impressions]

    def __len__(self) -> int:
        return len(self.impressions)


@dataclass(frozen=True)
class Session:
    user_id: str
    slates: tuple[Slate, ...]
    session_id: str = ""
    timestamp: int | None = None

    def __post_init__(self):
        if len(self.slates) == 0:
            raise DataError(f"session {self.session_id!r} has no slates")

    @property
    def n_impressions(self) -> int:
        return sum(len(s) for s in self.slates)

    @property
    def has_click_order(self) -> bool:
        return all(s.click_order is not None for s in self.slates)

    def clicked_items(self) -> list[int]:
        return [imp.item_id for s in self.slates for imp in s.impressions if imp.clicked]


def validate_catalog(sessions: Sequence[Session], n_items: int) -> None:
    for sess in sessions:
        for slate in sess.slates:
            for imp in slate.impressions:
                if not 0 <= imp.item_id < n_items:
                    raise CatalogError(
                        f"session {sess.session_id!r}: item {imp.item_id} outside catalog of {n_items} items"
                    )


@dataclass(frozen=True, eq=False)
class PaddedBatch:
    """Right-padded ``[batch, max_len]`` view of sessions.

    Flattened order is (slate order, within-slate position).  Padding has
    ``mask`` false, ``item_ids`` -1, ``slate_index`` -1.
    """

    item_ids: np.ndarray
    clicks: np.ndarray
    slate_index: np.ndarray
    positions: np.ndarray
    mask: np.ndarray
    user_ids: tuple[str, ...]
    session_ids: tuple[str, ...] = ()
    timestamps: tuple[int | None, ...] = ()
    click_rank: np.ndarray | None = None
    order_known: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.item_ids.shape[0]

    @property
    def length(self) -> int:
        return self.item_ids.shape[1]

    @property
    def slate_start(self) -> np.ndarray:
        return self.mask & (self.positions == 0)

    @property
    def n_slates(self) -> np.ndarray:
        return self.slate_index.max(axis=1) + 1

    @property
    def max_slate_len(self) -> int:
        return int(self.positions[self.mask].max()) + 1

    def slate_gather(self) -> np.ndarray:
        """Flat indices ``[batch, K, L]`` into ``batch*max_len`` (-1 where absent)."""
        if "gather" not in self._cache:
            k, lmax = int(self.n_slates.max()), self.max_slate_len
            idx = -np.ones((self.size, k, lmax), dtype=np.int64)
            b, t = np.nonzero(self.mask)
            idx[b, self.slate_index[b, t], self.positions[b, t]] = b * self.length + t
            self._cache["gather"] = idx
        return self._cache["gather"]

    def slate_scatter(self) -> np.ndarray:
        """Flat indices ``[batch, max_len]`` into ``batch*K*L`` (-1 at padding)."""
        if "scatter" not in self._cache:
            k, lmax = int(self.n_slates.max()), self.max_slate_len
            out = -np.ones(self.item_ids.shape, dtype=np.int64)
            b, t = np.nonzero(self.mask)
            out[b, t] = (b * k + self.slate_index[b, t]) * lmax + self.positions[b, t]
            self._cache["scatter"] = out
        return self._cache["scatter"]

    def last_index(self) -> np.ndarray:
        return self.mask.sum(axis=1) - 1


def _truncate(session: Session, max_len: int) -> Session:
    slates = list(session.slates)
    total = session.n_impressions
    while total > max_len:
        if len(slates) == 1:
            raise DataError(
                f"session {session.session_id!r}: last slate has {total} impressions, more than max_len={max_len}"
            )
        total -= len(slates.pop(0))
    return Session(session.user_id, tuple(slates), session.session_id, session.timestamp)


def build_batch(sessions: Sequence[Session], max_len: int = MAX_SESSION_LEN, truncate: bool = True) -> PaddedBatch:
    """Pad sessions into a batch, dropping oldest whole slates past ``max_len``."""
    if len(sessions) == 0:
        raise EmptyBatchError("cannot build a batch from zero sessions")
    prepared = []
    for s in sessions:
        if s.n_impressions > max_len:
            if not truncate:
                raise DataError(f"session {s.session_id!r} has {s.n_impressions} impressions > max_len={max_len}")
            s = _truncate(s, max_len)
        prepared.append(s)
    width = max(s.n_impressions for s in prepared)
    shape = (len(prepared), width)
    item_ids = -np.ones(shape, np.int64)
    clicks = np.zeros(shape)
    slate_index = -np.ones(shape, np.int64)
    positions = np.zeros(shape, np.int64)
    mask = np.zeros(shape, bool)
    click_rank = -np.ones(shape, np.int64)
    order_known = np.zeros(shape, bool)
    for b, s in enumerate(prepared):
        t = 0
        for k, slate in enumerate(s.slates):
            n = len(slate)
            item_ids[b, t:t + n] = slate.items
            clicks[b, t:t + n] = slate.clicks
            slate_index[b, t:t + n] = k
            positions[b, t:t + n] = np.arange(n)
            mask[b, t:t + n] = True
            if slate.click_order is not None:
                order_known[b, t:t + n] = True
                for rank, pos in enumerate(slate.click_order):
                    click_rank[b, t + pos] = rank
            t += n
    return PaddedBatch(
        item_ids=item_ids, clicks=clicks, slate_index=slate_index, positions=positions, mask=mask,
        user_ids=tuple(s.user_id for s in prepared), session_ids=tuple(s.session_id for s in prepared),
        timestamps=tuple(s.timestamp for s in prepared), click_rank=click_rank, order_known=order_known,
    )


def unbatch(batch: PaddedBatch) -> list[Session]:
    out = []
    for b in range(batch.size):
        slates = []
        for k in range(int(batch.n_slates[b])):
            sel = np.nonzero(batch.mask[b] & (batch.slate_index[b] == k))[0]
            items = batch.item_ids[b, sel].tolist()
            clicks = batch.clicks[b, sel].astype(int).tolist()
            order = None
            if batch.order_known is not None and batch.order_known[b, sel[0]]:
                ranks = batch.click_rank[b, sel]
                clicked = np.nonzero(ranks >= 0)[0]
                order = clicked[np.argsort(ranks[clicked])].tolist()
            slates.append(Slate.from_lists(items, clicks, order))
        sid = batch.session_ids[b] if batch.session_ids else ""
        ts = batch.timestamps[b] if batch.timestamps else None
        out.append(Session(batch.user_ids[b], tuple(slates), sid, ts))
    return out


def iter_batches(sessions: Sequence[Session], batch_size: int, rng: Rng | None = None,
                 max_len: int = MAX_SESSION_LEN) -> Iterator[PaddedBatch]:
    order = np.arange(len(sessions)) if rng is None else rng.permutation(len(sessions))
    for start in range(0, len(order), batch_size):
        yield build_batch([sessions[i] for i in order[start:start + batch_size]], max_len)


def split_dataset(sessions: Sequence[Session], fractions: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> tuple[list[Session], ...]:
    """Seeded session-level random partition (largest-remainder sizing)."""
    fr = np.asarray(fractions, dtype=np.float64)
    if (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be non-negative and sum to 1, got {list(fractions)}")
    n = len(sessions)
    parts = int((fr > 0).sum())
    if n < parts:
        raise DataError(f"cannot split {n} sessions into {parts} non-empty parts")
    raw = fr * n
    sizes = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1
    for i in np.nonzero((sizes == 0) & (fr > 0))[0]:
        sizes[np.argmax(sizes)] -= 1
        sizes[i] += 1
    perm = Rng(seed).permutation(n)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return tuple([sessions[j] for j in perm[bounds[i]:bounds[i + 1]]] for i in range(len(sizes)))
