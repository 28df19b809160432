"""Confusion counts, rate metrics, ROC/AUC and multi-seed summaries."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .detection import ScoredDay
from .errors import ConfigError, RowError, SchemaError

METRIC_NAMES = ("fpr", "recall", "tnr", "accuracy")
ROC_HEADER = ["threshold", "fpr", "tpr"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ConfigError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    """Rates from a confusion matrix; ``None`` marks a 0/0 rate."""

    fpr: float | None
    recall: float | None
    tnr: float | None
    accuracy: float | None

    def as_dict(self) -> dict[str, float | None]:
        return asdict(self)


def _require_labels(scored: Iterable[ScoredDay]) -> list[ScoredDay]:
    scored = list(scored)
    for s in scored:
        if s.label is None:
            raise ConfigError(f"day {s.user_id} {s.day} has no label")
    return scored


def confusion(scored: Iterable[ScoredDay]) -> ConfusionMatrix:
    tp = fp = tn = fn = 0
    for s in _require_labels(scored):
        if s.label:
            tp += s.flagged
            fn += not s.flagged
        else:
            fp += s.flagged
            tn += not s.flagged
    return ConfusionMatrix(tp, fp, tn, fn)


def _rate(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(m: ConfusionMatrix) -> Metrics:
    return Metrics(
        fpr=_rate(m.fp, m.tn + m.fp),
        recall=_rate(m.tp, m.tp + m.fn),
        tnr=_rate(m.tn, m.tn + m.fp),
        accuracy=_rate(m.tp + m.tn, m.total),
    )


@dataclass(frozen=True)
class RocCurve:
    """``points[i]`` is the (fpr, tpr) of flagging ``ratio > thresholds[i]``.

    Thresholds run from the largest observed ratio (nothing flagged) down
    through every distinct ratio to ``-inf`` (everything flagged).
    """

    thresholds: tuple[float, ...]
    points: tuple[tuple[float, float], ...]
    auc: float

    def point_at(self, threshold: float) -> tuple[float, float]:
        """Operating point for an arbitrary threshold."""
        # flags are constant between consecutive distinct ratios
        for t, p in zip(self.thresholds, self.points):
            if threshold >= t:
                return p
        return self.points[-1]

    def best_recall(self, max_fpr: float) -> tuple[float, float, float]:
        """``(threshold, fpr, tpr)`` with the highest tpr subject to ``fpr <= max_fpr``."""
        best = (self.thresholds[0], *self.points[0])
        for t, (f, r) in zip(self.thresholds, self.points):
            if f <= max_fpr and r > best[2]:
                best = (t, f, r)
        return best


def roc_curve(scored: Sequence[ScoredDay], score_key: str = "ratio") -> RocCurve:
    """ROC over distinct score values, equal scores grouped into one step."""
    scored = _require_labels(scored)
    scores = np.array([getattr(s, score_key) for s in scored], dtype=float)
    labels = np.array([bool(s.label) for s in scored])
    return roc_from_arrays(scores, labels)


def roc_from_arrays(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ConfigError("scores and labels must be 1-d arrays of equal length")
    if np.any(np.isnan(scores)):
        raise ConfigError("scores contain NaN")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ConfigError(f"ROC needs both classes, got {n_pos} positive and {n_neg} negative days")

    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[s[ends], -math.inf]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(tuple(thresholds.tolist()), tuple(zip(fpr.tolist(), tpr.tolist())), auc)


def write_roc(path: str | Path, roc: RocCurve) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROC_HEADER)
        for t, (f, r) in zip(roc.thresholds, roc.points):
            w.writerow([repr(t), repr(f), repr(r)])


def write_roc_header(path: str | Path) -> None:
    """Header-only ROC file for runs whose labels hold a single class."""
    Path(path).write_text(",".join(ROC_HEADER) + "\n", encoding="utf-8")


def read_roc(path: str | Path) -> list[tuple[float, float, float]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ROC_HEADER:
            raise SchemaError(",".join(ROC_HEADER), path)
        try:
            return [(float(a), float(b), float(c)) for a, b, c in reader]
        except ValueError as exc:
            raise RowError(reader.line_num, str(exc), path) from None


@dataclass(frozen=True)
class Summary:
    mean: float | None
    min: float | None
    max: float | None
    stddev: float | None
    n: int


def stability_report(run_metrics: Iterable[Mapping[str, float | None] | Metrics]) -> dict[str, Summary]:
    """Mean, min, max and population stddev of each metric across runs.

    Undefined (``None``) values are left out of that metric's summary; ``n``
    counts the runs that contributed.
    """
    columns: dict[str, list[float]] = {}
    runs = 0
    for run in run_metrics:
        runs += 1
        items = run.as_dict() if isinstance(run, Metrics) else run
        for name, value in items.items():
            col = columns.setdefault(name, [])
            if value is not None:
                col.append(float(value))
    if runs == 0:
        raise ConfigError("stability_report needs at least one run")
    out = {}
    for name, values in columns.items():
        if not values:
            out[name] = Summary(None, None, None, None, 0)
            continue
        arr = np.sort(np.array(values))  # sorted so the result is order-independent
        out[name] = Summary(float(arr.mean()), float(arr[0]), float(arr[-1]), float(arr.std()), arr.size)
    return out
