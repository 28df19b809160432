from __future__ import annotations

import logging
import math
from datetime import date, timedelta

import numpy as np
import pytest
from helpers import random_spd
from hypothesis import given
from hypothesis import strategies as st

from insider_bgmm.detection import (
    ScoredDay,
    anomaly_ratios,
    flag_anomalies,
    normalize_scores,
    read_scored,
    score_user_days,
    write_scored,
)
from insider_bgmm.embedding import DaySummary
from insider_bgmm.errors import ConfigError, DimensionError, SchemaError
from insider_bgmm.mixture import MixtureModel

D0 = date(2010, 1, 4)


def _summaries(vectors, user: str = "U1") -> list[DaySummary]:
    return [DaySummary(user, D0 + timedelta(days=i), np.asarray(v, dtype=float)) for i, v in enumerate(vectors)]


def _scored(lls, user: str = "U1") -> list[ScoredDay]:
    return [ScoredDay(user, D0 + timedelta(days=i), float(v)) for i, v in enumerate(lls)]


def test_day_at_mode_of_standard_model():
    for d in (1, 2, 10):
        model = MixtureModel(np.ones(1), np.full((1, d), 0.5), np.eye(d)[None])
        (s,) = score_user_days(_summaries([np.full(d, 0.5)]), model)
        assert s.log_likelihood == pytest.approx(-(d / 2) * math.log(2 * math.pi), abs=1e-12)
        assert s.ratio is None and not s.flagged


def test_scores_match_naive_two_dimensional_sum():
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(3))
    mu = rng.normal(size=(3, 2))
    cov = np.array([random_spd(rng, 2) for _ in range(3)])
    model = MixtureModel(w, mu, cov)
    vecs = rng.normal(size=(25, 2))
    scored = score_user_days(_summaries(vecs), model)
    assert [s.day for s in scored] == [D0 + timedelta(days=i) for i in range(25)]
    for s, x in zip(scored, vecs):
        dens = sum(
            w[j] * math.exp(-0.5 * (x - mu[j]) @ np.linalg.inv(cov[j]) @ (x - mu[j])) / (2 * math.pi * math.sqrt(np.linalg.det(cov[j])))
            for j in range(3)
        )
        assert s.log_likelihood == pytest.approx(math.log(dens), abs=1e-9)


def test_scoring_rejects_dimension_mismatch_and_mixed_users():
    model = MixtureModel(np.ones(1), np.zeros((1, 3)), np.eye(3)[None])
    with pytest.raises(DimensionError):
        score_user_days(_summaries([[0.0, 0.0]]), model)
    with pytest.raises(ConfigError):
        score_user_days(_summaries([[0.0] * 3]) + _summaries([[0.0] * 3], "U2"), model)
    assert score_user_days([], model) == []


def test_equal_scores_give_unit_ratios():
    for c in (-7.5, 3.0):
        assert [s.ratio for s in normalize_scores(_scored([c] * 4))] == [1.0] * 4


def test_two_score_example():
    ratios = [s.ratio for s in normalize_scores(_scored([-2.0, -4.0]))]
    assert ratios == pytest.approx([2 / 3, 4 / 3], abs=1e-12)
    assert ratios == pytest.approx([0.6667, 1.3333], abs=5e-5)


def test_negative_mean_ratio_is_plain_division():
    ll = np.array([-10.0, -12.0, -30.0, -8.0])
    ratios, fallback = anomaly_ratios(ll)
    assert not fallback
    np.testing.assert_allclose(ratios, ll / ll.mean(), rtol=1e-14)


def test_positive_mean_keeps_unlikely_days_above_one():
    ratios, _ = anomaly_ratios(np.array([30.0, 32.0, 28.0, -10.0]))
    assert ratios[3] > 1.0 and ratios[1] < 1.0
    assert ratios.mean() == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=1, max_size=50).filter(lambda v: abs(np.mean(v)) >= 1e-3))
def test_ratio_mean_is_one_and_order_reversed(values):
    ll = np.array(values)
    ratios, fallback = anomaly_ratios(ll)
    assert not fallback
    assert ratios.mean() == pytest.approx(1.0, abs=1e-9)
    # lower likelihood never gets a lower ratio
    order = np.argsort(ll, kind="stable")
    assert np.all(np.diff(ratios[order]) <= 1e-9)


def test_top_ratios_are_bottom_scores():
    ll = np.random.default_rng(1).normal(-40.0, 5.0, size=200)
    ratios, _ = anomaly_ratios(ll)
    q = 20
    assert set(np.argsort(-ratios)[:q]) == set(np.argsort(ll)[:q])


def test_near_zero_mean_uses_rank_fallback(caplog):
    with caplog.at_level(logging.WARNING, logger="insider_bgmm.detection"):
        out = normalize_scores(_scored([-1.0, 1.0, 0.0]))
    assert "rank" in caplog.text and "U1" in caplog.text
    ratios = [s.ratio for s in out]
    assert all(math.isfinite(r) for r in ratios)
    # least likely day still ranks highest, and the mean stays 1
    assert ratios[0] > ratios[2] > ratios[1]
    assert np.mean(ratios) == pytest.approx(1.0)


def test_normalize_rejects_empty():
    with pytest.raises(ConfigError):
        normalize_scores([])


def test_flag_example_and_strict_inequality():
    days = [ScoredDay("U1", D0, -1.0, ratio=r) for r in (0.9, 1.0, 2.5)]
    assert [s.flagged for s in flag_anomalies(days, 1.5)] == [False, False, True]
    assert [s.flagged for s in flag_anomalies(days, 2.5)] == [False, False, False]
    assert not any(s.flagged for s in flag_anomalies(days, math.inf))
    with pytest.raises(ConfigError):
        flag_anomalies([ScoredDay("U1", D0, -1.0)], 1.5)


def test_flag_count_monotone_over_threshold_sweep():
    rng = np.random.default_rng(7)
    days = [ScoredDay("U1", D0, -1.0, ratio=float(r)) for r in rng.lognormal(0.0, 0.4, size=300)]
    previous: set[int] | None = None
    for t in np.linspace(0.0, 4.0, 100):
        flagged = {i for i, s in enumerate(flag_anomalies(days, float(t))) if s.flagged}
        if previous is not None:
            assert flagged <= previous
        previous = flagged


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=40), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_flag_sets_nest(ratios, t1, t2):
    lo, hi = sorted((t1, t2))
    days = [ScoredDay("U1", D0, -1.0, ratio=r) for r in ratios]
    low = {i for i, s in enumerate(flag_anomalies(days, lo)) if s.flagged}
    high = {i for i, s in enumerate(flag_anomalies(days, hi)) if s.flagged}
    assert high <= low


def test_users_are_scored_independently():
    rng = np.random.default_rng(3)
    a = normalize_scores(_scored(rng.normal(-20, 3, size=30), "A"))
    b = normalize_scores(_scored(rng.normal(-50, 3, size=30), "B"))
    again = normalize_scores(_scored([s.log_likelihood for s in a], "A"))
    assert again == a and b[0].user_id == "B"


def test_scored_file_round_trip(tmp_path):
    days = [
        ScoredDay("U1", D0, -12.345678901234567, 1.0000000000000002, True, False),
        ScoredDay("U2", D0, 31.5, None, False, None),
    ]
    write_scored(tmp_path / "s.csv", days)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "user,day,log_likelihood,ratio,flagged,label"
    assert read_scored(tmp_path / "s.csv") == days
    (tmp_path / "bad.csv").write_text("user,day\n")
    with pytest.raises(SchemaError):
        read_scored(tmp_path / "bad.csv")
