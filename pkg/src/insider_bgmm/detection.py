"""Per-day log-likelihood scoring, per-user ratio normalization and thresholding."""

from __future__ import annotations

import csv
import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .embedding import DaySummary
from .errors import ConfigError, DimensionError, RowError, SchemaError
from .mixture import MixtureModel, mixture_log_likelihoods

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 1.5
NEAR_ZERO_MEAN = 1e-9
SCORED_HEADER = ["user", "day", "log_likelihood", "ratio", "flagged", "label"]


@dataclass(frozen=True)
class ScoredDay:
    user_id: str
    day: date
    log_likelihood: float
    ratio: float | None = None
    flagged: bool = False
    label: bool | None = None


def score_user_days(summaries: Sequence[DaySummary], model: MixtureModel) -> list[ScoredDay]:
    """Mixture log-likelihood of every day vector, in input order."""
    if not summaries:
        return []
    users = {s.user_id for s in summaries}
    if len(users) != 1:
        raise ConfigError(f"summaries span {len(users)} users; score one user at a time")
    X = np.vstack([s.vector for s in summaries])
    if X.shape[1] != model.dim:
        raise DimensionError(f"summary dimension {X.shape[1]} does not match model dimension {model.dim}")
    ll = mixture_log_likelihoods(X, model)
    return [ScoredDay(s.user_id, s.day, float(v), label=s.label) for s, v in zip(summaries, ll)]


def anomaly_ratios(log_likelihoods: np.ndarray) -> tuple[np.ndarray, bool]:
    """Ratios for one user's scores, plus whether the rank fallback was used.

    With ``m`` the mean score, the ratio is ``1 + (m - ll) / |m|``.  For the
    usual negative ``m`` this is exactly ``ll / m``; for positive ``m`` (possible
    because day vectors live in a low-dimensional subspace, so densities can
    exceed 1) it keeps less likely days above 1 rather than flipping them below.
    When ``|m| < 1e-9`` the ratio is undefined and a rank surrogate with the
    same orientation and mean 1 is returned instead: ``(2r - 1) / n`` where
    ``r`` is the day's rank from the most likely day (ties averaged).
    """
    ll = np.asarray(log_likelihoods, dtype=float)
    if ll.size == 0:
        raise ConfigError("cannot normalize an empty score list")
    m = ll.mean()
    if abs(m) < NEAR_ZERO_MEAN:
        rank = rankdata(-ll, method="average")
        return (2.0 * rank - 1.0) / ll.size, True
    return 1.0 + (m - ll) / abs(m), False


def normalize_scores(scored: Sequence[ScoredDay]) -> list[ScoredDay]:
    """Set ``ratio`` on one user's scored days."""
    if not scored:
        raise ConfigError("cannot normalize an empty score list")
    ratios, fallback = anomaly_ratios(np.array([s.log_likelihood for s in scored]))
    if fallback:
        log.warning("user %s: mean score within %g of zero; using rank-based ratios", scored[0].user_id, NEAR_ZERO_MEAN)
    return [replace(s, ratio=float(r)) for s, r in zip(scored, ratios)]


def flag_anomalies(scored: Sequence[ScoredDay], threshold: float) -> list[ScoredDay]:
    """Flag days whose ratio is strictly greater than ``threshold``."""
    out = []
    for s in scored:
        if s.ratio is None:
            raise ConfigError(f"day {s.user_id} {s.day} has no ratio; normalize before flagging")
        out.append(replace(s, flagged=bool(s.ratio > threshold)))
    return out


def write_scored(path: str | Path, scored: Sequence[ScoredDay]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORED_HEADER)
        for s in scored:
            w.writerow(
                [
                    s.user_id,
                    s.day.isoformat(),
                    repr(s.log_likelihood),
                    "" if s.ratio is None else repr(s.ratio),
                    int(s.flagged),
                    "" if s.label is None else int(s.label),
                ]
            )


def read_scored(path: str | Path) -> list[ScoredDay]:
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != SCORED_HEADER:
            raise SchemaError(",".join(SCORED_HEADER), path)
        for row in reader:
            try:
                out.append(
                    ScoredDay(
                        row[0],
                        date.fromisoformat(row[1]),
                        float(row[2]),
                        None if row[3] == "" else float(row[3]),
                        bool(int(row[4])),
                        None if row[5] == "" else bool(int(row[5])),
                    )
                )
            except (ValueError, IndexError) as exc:
                raise RowError(reader.line_num, str(exc), path) from None
    return out
