"""Impression-level metrics, paired session bootstrap, and the results table.

All metrics are micro-pooled over unmasked impressions.  F1 and accuracy
binarise probabilities at ``threshold`` (0.5 by default).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .diffmath import Rng
from .errors import DataError, DimensionError, UndefinedMetricError

METRICS = ("auc", "f1", "accuracy")


def _check_lengths(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")


def roc_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    _check_lengths(s, y)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both positive and negative labels")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(predictions, labels) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn)."""
    p = np.asarray(predictions).ravel().astype(bool)
    y = np.asarray(labels).ravel().astype(bool)
    _check_lengths(p, y)
    tp = int((p & y).sum())
    fp = int((p & ~y).sum())
    fn = int((~p & y).sum())
    return tp, fp, fn, int(p.size - tp - fp - fn)


def f1_score(predictions, labels) -> float:
    """Positive-class F1; 0 when precision + recall is 0.

    Written as 2tp / (2tp + fp + fn), the harmonic mean of precision and recall
    in a single division, so the result is the correctly rounded ratio.
    """
    tp, fp, fn, _ = confusion(predictions, labels)
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def accuracy(predictions, labels) -> float:
    tp, fp, fn, tn = confusion(predictions, labels)
    n = tp + fp + fn + tn
    if n == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    return (tp + tn) / n


def compute_metrics(probs, labels, threshold: float = 0.5) -> dict[str, float]:
    probs = np.asarray(probs, dtype=np.float64)
    preds = probs > threshold
    return {"auc": roc_auc(probs, labels), "f1": f1_score(preds, labels), "accuracy": accuracy(preds, labels)}


def _metric_fn(name: str, threshold: float) -> Callable[[np.ndarray, np.ndarray], float]:
    if name == "auc":
        return roc_auc
    if name == "f1":
        return lambda s, y: f1_score(s > threshold, y)
    if name == "accuracy":
        return lambda s, y: accuracy(s > threshold, y)
    raise ValueError(f"unknown metric {name!r}")


@dataclass
class BootstrapResult:
    metric: str
    mean_delta: float
    ci_low: float
    ci_high: float
    n_resamples: int
    redrawn: int

    @property
    def significant(self) -> bool:
        return self.ci_low > 0 or self.ci_high < 0

    def to_dict(self) -> dict:
        return dict(asdict(self), significant=self.significant)


def bootstrap_compare(scores_a, scores_b, labels, session_index, n: int = 1000, seed: int = 0,
                      metrics: Sequence[str] = METRICS, threshold: float = 0.5,
                      max_redraws: int | None = None) -> dict[str, BootstrapResult]:
    """Paired session-level bootstrap of ``metric(a) - metric(b)``.

    Sessions are resampled with replacement; a resample whose labels hold a
    single class is redrawn (and counted) rather than scored.
    """
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    sid = np.asarray(session_index).ravel()
    _check_lengths(a, b)
    _check_lengths(a, y)
    _check_lengths(a, sid)
    uniq, inverse = np.unique(sid, return_inverse=True)
    members = [np.nonzero(inverse == k)[0] for k in range(len(uniq))]
    fns = {m: _metric_fn(m, threshold) for m in metrics}
    rng = Rng(seed)
    deltas = {m: np.empty(n) for m in metrics}
    redrawn = 0
    limit = max_redraws if max_redraws is not None else 100 * n
    i = 0
    while i < n:
        pick = rng.integers(0, len(members), len(members))
        idx = np.concatenate([members[k] for k in pick])
        yy = y[idx]
        if yy.min() == yy.max():
            redrawn += 1
            if redrawn > limit:
                raise DataError("bootstrap keeps drawing single-class resamples")
            continue
        for m, fn in fns.items():
            deltas[m][i] = fn(a[idx], yy) - fn(b[idx], yy)
        i += 1
    out = {}
    for m in metrics:
        lo, hi = np.percentile(deltas[m], [2.5, 97.5])
        out[m] = BootstrapResult(m, float(deltas[m].mean()), float(lo), float(hi), n, redrawn)
    return out


# -- reports ---------------------------------------------------------------------

MODEL_NAMES = {
    "MF": "MF",
    "LogReg": "Logistic regression",
    "SlateTransformer": "Slate-wise Transformer",
    "SessionTransformer": "Session-wise Transformer",
    "SlateGRU": "Slate-wise GRU",
    "AggSlateGRU": "Aggregated Slate-wise GRU",
    "SessionGRU": "Session-wise GRU",
    "NCM": "Neural Click Model",
    "AdvNCM": "AdvNCM",
    "RANCM": "RANCM",
    "SCOT": "SCOT",
    "TransformerGRU": "Transformer + GRU",
}
EMBEDDING_LABELS = {"svd": "SVD", "learnable": "NN", "external": "Ext."}
EMBEDDING_ORDER = ("SVD", "NN", "Ext.", "")
BOLD = "**"
MISSING = "---"


@dataclass
class ReportRow:
    model: str
    embedding: str
    dataset: str
    auc: float | None
    f1: float | None
    accuracy: float | None
    n_impressions: int = 0

    def __post_init__(self):
        for m in METRICS:
            v = getattr(self, m)
            if v is not None and not 0.0 <= v <= 1.0:
                raise DataError(f"{m}={v} outside [0, 1]")


@dataclass
class EvalReport:
    rows: list[ReportRow]
    seed: int
    config_hash: str = ""
    bootstrap: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        raw = json.loads(text)
        raw["rows"] = [ReportRow(**r) for r in raw["rows"]]
        return cls(**raw)


@dataclass
class ResultsTable:
    header: list[str]
    rows: list[list[str]]

    def to_text(self) -> str:
        widths = [max(len(r[i]) for r in [self.header] + self.rows) for i in range(len(self.header))]
        fmt = lambda r: "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
        rule = "-" * len(fmt(self.header))
        return "\n".join([fmt(self.header), rule] + [fmt(r) for r in self.rows]) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()


def _model_rank(model: str) -> int:
    names = list(MODEL_NAMES)
    return names.index(model) if model in names else len(names)


def emit_results_table(reports: Iterable[EvalReport] | Iterable[ReportRow],
                       datasets: Sequence[str] | None = None) -> ResultsTable:
    """Model x embedding rows, dataset x (AUC, F1, Acc.) columns; column maxima bolded."""
    rows: list[ReportRow] = []
    for r in reports:
        rows.extend(r.rows if isinstance(r, EvalReport) else [r])
    if datasets is None:
        datasets = list(dict.fromkeys(r.dataset for r in rows))
    cells: dict[tuple[str, str, str], ReportRow] = {(r.model, r.embedding, r.dataset): r for r in rows}
    keys = sorted({(r.model, r.embedding) for r in rows},
                  key=lambda k: (_model_rank(k[0]), k[0], EMBEDDING_ORDER.index(k[1]) if k[1] in EMBEDDING_ORDER else 9))
    best = {}
    for ds in datasets:
        for m in METRICS:
            vals = [getattr(r, m) for (mm, e, d), r in cells.items() if d == ds and getattr(r, m) is not None]
            best[(ds, m)] = max(vals) if vals else None
    header = ["Model", "Emb."] + [f"{ds} {lab}" for ds in datasets for lab in ("AUC", "F1", "Acc.")]
    out = []
    for model, emb in keys:
        line = [MODEL_NAMES.get(model, model), emb]
        for ds in datasets:
            r = cells.get((model, emb, ds))
            for m in METRICS:
                v = None if r is None else getattr(r, m)
                if v is None:
                    line.append(MISSING)
                else:
                    text = f"{v:.3f}"
                    line.append(f"{BOLD}{text}{BOLD}" if v == best[(ds, m)] else text)
        out.append(line)
    return ResultsTable(header, out)
