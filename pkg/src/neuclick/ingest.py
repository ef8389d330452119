"""Dataset loaders, canonical session files, and the synthetic oracle user.

Real-data adapters are driven by column maps so that no dataset schema is
hard-coded; the defaults match the fixtures under ``tests/fixtures``.
"""

from __future__ import annotations

import ast
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .datamodel import Session, Slate, validate_catalog
from .diffmath import Rng
from .errors import CatalogError, ConfigurationError, DataError, ParseError

log = logging.getLogger(__name__)


@dataclass
class ExternalEmbeddings:
    item_vectors: np.ndarray
    user_vectors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.item_vectors.shape[1]


@dataclass
class Dataset:
    sessions: list[Session]
    n_items: int
    item_keys: list[str] | None = None
    external: ExternalEmbeddings | None = None

    @property
    def has_click_order(self) -> bool:
        return all(s.has_click_order for s in self.sessions)


# -- synthetic oracle ------------------------------------------------------------


@dataclass
class OracleUserModel:
    """Ground-truth click generator.

    P(click | user u, item v, position p, c prior clicks in the session)
        = sigmoid(<u, v> + position_bias[p] - fatigue * c)
    """

    user_vectors: np.ndarray
    item_vectors: np.ndarray
    position_bias: np.ndarray
    fatigue: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.user_vectors = np.asarray(self.user_vectors, dtype=np.float64)
        self.item_vectors = np.asarray(self.item_vectors, dtype=np.float64)
        self.position_bias = np.asarray(self.position_bias, dtype=np.float64)
        if self.user_vectors.shape[1] != self.item_vectors.shape[1]:
            raise ConfigurationError("oracle user and item vectors must share a dimension")
        if self.fatigue < 0:
            raise ConfigurationError(f"fatigue must be >= 0, got {self.fatigue}")

    @classmethod
    def random(cls, n_users: int, n_items: int, dim: int, *, scale: float = 0.5,
               position_bias: Sequence[float] | float = -0.2, max_slate_len: int = 8,
               fatigue: float = 0.3, seed: int = 0) -> OracleUserModel:
        """Gaussian vectors with per-coordinate variance ``scale``; scalar bias means a linear slope."""
        rng = Rng(seed)
        users = rng.normal(0.0, np.sqrt(scale), (n_users, dim))
        items = rng.normal(0.0, np.sqrt(scale), (n_items, dim))
        if np.isscalar(position_bias):
            bias = float(position_bias) * np.arange(max_slate_len)
        else:
            bias = np.asarray(position_bias, dtype=np.float64)
        return cls(users, items, bias, fatigue, seed)

    @property
    def n_users(self) -> int:
        return self.user_vectors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_vectors.shape[0]

    @staticmethod
    def user_key(index: int) -> str:
        return f"u{index}"

    def user_index(self, user_id: str) -> int:
        try:
            idx = int(str(user_id).lstrip("u"))
        except ValueError:
            raise CatalogError(f"oracle has no user {user_id!r}") from None
        if not 0 <= idx < self.n_users:
            raise CatalogError(f"oracle has no user {user_id!r}")
        return idx

    def click_probability(self, user: int, item: int, position: int, prior_clicks: int) -> float:
        return float(expit(self.user_vectors[user] @ self.item_vectors[item]
                           + self.position_bias[position] - self.fatigue * prior_clicks))

    def session_probabilities(self, session: Session) -> np.ndarray:
        """True click probabilities of every impression, given the realised prior clicks."""
        u = self.user_vectors[self.user_index(session.user_id)]
        out, c = [], 0
        for slate in session.slates:
            for imp in slate.impressions:
                out.append(expit(u @ self.item_vectors[imp.item_id]
                                 + self.position_bias[imp.position] - self.fatigue * c))
                c += imp.clicked
        return np.asarray(out)

    def external_embeddings(self) -> ExternalEmbeddings:
        return ExternalEmbeddings(self.item_vectors.copy(),
                                  {self.user_key(i): v.copy() for i, v in enumerate(self.user_vectors)})


def generate_synthetic(oracle: OracleUserModel, n_sessions: int, slates_per_session: int,
                       slate_len: int, rng: Rng) -> list[Session]:
    """Sessions of uniformly random distinct items with oracle-drawn clicks.

    Clicks are drawn position by position; ``click_order`` records that draw order.
    """
    if slate_len > oracle.n_items:
        raise ConfigurationError(f"slate_len {slate_len} exceeds catalog of {oracle.n_items} items")
    if slate_len > len(oracle.position_bias):
        raise ConfigurationError(f"slate_len {slate_len} exceeds position_bias length {len(oracle.position_bias)}")
    sessions = []
    for s in range(n_sessions):
        user = int(rng.integers(oracle.n_users))
        c = 0
        slates = []
        for _ in range(slates_per_session):
            items = rng.choice(oracle.n_items, slate_len, replace=False)
            logits = oracle.item_vectors[items] @ oracle.user_vectors[user] + oracle.position_bias[:slate_len]
            u = rng.uniform(size=slate_len)
            clicks = []
            for p in range(slate_len):
                hit = int(u[p] < expit(logits[p] - oracle.fatigue * c))
                clicks.append(hit)
                c += hit
            order = [p for p, hit in enumerate(clicks) if hit]
            slates.append(Slate.from_lists(items.tolist(), clicks, order))
        sessions.append(Session(oracle.user_key(user), tuple(slates), f"syn{s}", None))
    return sessions


# -- canonical line-delimited format -------------------------------------------


def session_to_record(session: Session) -> dict:
    rec = {"user_id": session.user_id, "session_id": session.session_id, "slates": []}
    for slate in session.slates:
        entry = {"items": slate.items, "clicks": slate.clicks}
        if slate.click_order is not None:
            entry["click_order"] = list(slate.click_order)
        rec["slates"].append(entry)
    if session.timestamp is not None:
        rec["timestamp"] = session.timestamp
    return rec


def session_from_record(rec: Mapping) -> Session:
    if not isinstance(rec, Mapping):
        raise DataError("record must be a JSON object")
    missing = [k for k in ("user_id", "session_id", "slates") if k not in rec]
    if missing:
        raise DataError(f"missing fields {missing}")
    if not isinstance(rec["slates"], list) or not rec["slates"]:
        raise DataError("'slates' must be a non-empty list")
    slates = []
    for k, entry in enumerate(rec["slates"]):
        if not isinstance(entry, Mapping) or "items" not in entry or "clicks" not in entry:
            raise DataError(f"slate {k} needs 'items' and 'clicks'")
        items, clicks = entry["items"], entry["clicks"]
        if not all(isinstance(i, int) and not isinstance(i, bool) for i in items):
            raise DataError(f"slate {k}: items must be integers")
        if not all(c in (0, 1) for c in clicks):
            raise DataError(f"slate {k}: clicks must be 0 or 1")
        slates.append(Slate.from_lists(items, clicks, entry.get("click_order")))
    ts = rec.get("timestamp")
    return Session(str(rec["user_id"]), tuple(slates), str(rec["session_id"]), None if ts is None else int(ts))


def write_canonical(sessions: Iterable[Session], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            fh.write(json.dumps(session_to_record(s), separators=(",", ":"), sort_keys=True) + "\n")


def load_canonical(path: str | Path, n_items: int | None = None) -> list[Session]:
    sessions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                sess = session_from_record(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            except DataError as exc:
                raise ParseError(str(exc), lineno) from None
            if n_items is not None:
                try:
                    validate_catalog([sess], n_items)
                except CatalogError as exc:
                    raise CatalogError(f"line {lineno}: {exc}") from None
            sessions.append(sess)
    return sessions


# -- external embeddings ---------------------------------------------------------


def read_embedding_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    """``id,dim0,...,dim{d-1}`` comma-separated text."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id" or header[1:] != [f"dim{i}" for i in range(len(header) - 1)]:
            raise ConfigurationError(f"{path}: header must be id,dim0,...,dim{{d-1}}")
        d = len(header) - 1
        keys, rows = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ConfigurationError(f"{path}:{lineno}: expected {d} dimensions, got {len(row) - 1}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError(f"{path}: non-numeric embedding value", lineno) from None
            keys.append(row[0])
    vecs = np.asarray(rows, dtype=np.float64).reshape(len(rows), d)
    if not np.isfinite(vecs).all():
        raise DataError(f"{path}: non-finite embedding values")
    return keys, vecs


def write_embedding_table(path: str | Path, keys: Sequence[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"dim{i}" for i in range(vectors.shape[1])])
        for k, v in zip(keys, vectors):
            w.writerow([k] + [repr(float(x)) for x in v])


def load_external_embeddings(item_path: str | Path, user_path: str | Path | None = None,
                             item_index: Mapping[str, int] | None = None,
                             n_items: int | None = None) -> ExternalEmbeddings:
    keys, vecs = read_embedding_table(item_path)
    if item_index is None:
        item_index = {k: int(k) for k in keys}
    n = n_items if n_items is not None else max(item_index.values()) + 1
    table = np.zeros((n, vecs.shape[1]))
    for k, v in zip(keys, vecs):
        if k in item_index:
            table[item_index[k]] = v
    users = {}
    if user_path is not None:
        ukeys, uvecs = read_embedding_table(user_path)
        if uvecs.shape[1] != vecs.shape[1]:
            raise ConfigurationError(
                f"user embeddings have dimension {uvecs.shape[1]}, item embeddings {vecs.shape[1]}"
            )
        users = dict(zip(ukeys, uvecs))
    return ExternalEmbeddings(table, users)


# -- real-data adapters --------------------------------------------------------


def _read_table(path: Path, required: Mapping[str, str], what: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        present = set(reader.fieldnames or [])
        missing = sorted(col for col in required.values() if col not in present)
        if missing:
            raise ConfigurationError(f"{what} table {path.name} lacks columns: {', '.join(missing)}")
        return list(reader)


def _parse_list(text: str) -> list:
    text = text.strip()
    if text.startswith("["):
        try:
            return list(ast.literal_eval(text))
        except (ValueError, SyntaxError):
            raise DataError(f"cannot parse list {text!r}") from None
    sep = "," if "," in text else None
    return [t for t in text.split(sep) if t]


CONTENTWISE_COLUMNS = {
    "user": "user_id",
    "timestamp": "utc_ts_milliseconds",
    "series_list": "recommended_series_list",
    "interaction_series": "series_id",
    "interaction_user": "user_id",
    "interaction_timestamp": "utc_ts_milliseconds",
}


def load_contentwise(directory: str | Path, column_map: Mapping[str, str] | None = None, *,
                     impressions_file: str = "impressions.csv", interactions_file: str = "interactions.csv",
                     window_minutes: float = 30.0) -> Dataset:
    """Series-level sessions from an impressions log and an interactions log.

    Each impression row is one slate.  A user's impressions are split into
    sessions wherever consecutive impressions are more than the window
    apart.  A series in a slate counts as clicked iff the same user has an
    interaction with that series at or after the impression and within the
    window; click order follows the first such interaction time.
    """
    cols = dict(CONTENTWISE_COLUMNS, **(column_map or {}))
    directory = Path(directory)
    window = int(window_minutes * 60_000)
    imp_rows = _read_table(directory / impressions_file,
                           {k: cols[k] for k in ("user", "timestamp", "series_list")}, "impressions")
    int_rows = _read_table(directory / interactions_file,
                           {k: cols[k] for k in ("interaction_user", "interaction_series", "interaction_timestamp")},
                           "interactions")

    interactions: dict[tuple[str, str], list[int]] = {}
    for row in int_rows:
        key = (row[cols["interaction_user"]], row[cols["interaction_series"]].strip())
        interactions.setdefault(key, []).append(int(row[cols["interaction_timestamp"]]))
    for v in interactions.values():
        v.sort()

    parsed = []
    for row in imp_rows:
        series = [str(s).strip() for s in _parse_list(row[cols["series_list"]])]
        if series:
            parsed.append((row[cols["user"]], int(row[cols["timestamp"]]), series))
    all_series = sorted({s for _, _, ser in parsed for s in ser}, key=_natural_key)
    index = {s: i for i, s in enumerate(all_series)}

    parsed.sort(key=lambda r: (r[0], r[1]))
    sessions: list[Session] = []
    current: list[Slate] = []
    cur_user, cur_start, last_ts = None, None, None
    for user, ts, series in parsed:
        if current and (user != cur_user or ts - last_ts > window):
            sessions.append(Session(cur_user, tuple(current), f"{cur_user}-{cur_start}", cur_start))
            current = []
        if not current:
            cur_user, cur_start = user, ts
        first_hit = []
        for s in series:
            times = [t for t in interactions.get((user, s), ()) if ts <= t <= ts + window]
            first_hit.append(times[0] if times else None)
        clicks = [int(t is not None) for t in first_hit]
        order = sorted((p for p, t in enumerate(first_hit) if t is not None), key=lambda p: (first_hit[p], p))
        current.append(Slate.from_lists([index[s] for s in series], clicks, order))
        last_ts = ts
    if current:
        sessions.append(Session(cur_user, tuple(current), f"{cur_user}-{cur_start}", cur_start))
    return Dataset(sessions, len(all_series), all_series)


RL4RS_COLUMNS = {
    "session": "session_id",
    "order": "sequence_id",
    "user": "session_id",
    "items": "exposed_items",
    "labels": "user_feedback",
}


def load_rl4rs(directory: str | Path, column_map: Mapping[str, str] | None = None, *,
               slates_file: str = "slates.csv", item_embeddings: str | None = "item_embeddings.csv",
               user_embeddings: str | None = "user_embeddings.csv") -> Dataset:
    """Fixed-size purchase slates grouped by session; no click order is available."""
    cols = dict(RL4RS_COLUMNS, **(column_map or {}))
    directory = Path(directory)
    rows = _read_table(directory / slates_file, {k: cols[k] for k in ("session", "order", "user", "items", "labels")},
                       "slate-log")
    grouped: dict[str, list[tuple[int, str, list[str], list[int]]]] = {}
    for lineno, row in enumerate(rows, 2):
        items = [str(i).strip() for i in _parse_list(row[cols["items"]])]
        labels = [int(float(x)) for x in _parse_list(row[cols["labels"]])]
        if len(items) != len(labels):
            raise ParseError(f"{len(items)} items but {len(labels)} labels", lineno)
        grouped.setdefault(row[cols["session"]], []).append((int(row[cols["order"]]), row[cols["user"]], items, labels))
    all_items = sorted({i for g in grouped.values() for _, _, items, _ in g for i in items}, key=_natural_key)
    index = {k: i for i, k in enumerate(all_items)}
    sessions = []
    for sid in sorted(grouped, key=_natural_key):
        entries = sorted(grouped[sid], key=lambda e: e[0])
        slates = tuple(Slate.from_lists([index[i] for i in items], labels) for _, _, items, labels in entries)
        sessions.append(Session(entries[0][1], slates, sid))

    external = None
    if item_embeddings and (directory / item_embeddings).exists():
        upath = directory / user_embeddings if user_embeddings and (directory / user_embeddings).exists() else None
        external = load_external_embeddings(directory / item_embeddings, upath, index, len(all_items))
    return Dataset(sessions, len(all_items), all_items, external)


def _natural_key(s: str):
    return (0, int(s), "") if s.lstrip("-").isdigit() else (1, 0, s)
