import random
import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TOKEN, rec
from oracles import ap_sweep, auc_pairs
from rugwarn.errors import DegenerateLabels, EmptyInput
from rugwarn.features import FEATURE_NAMES
from rugwarn.ingest import TokenDataset
from rugwarn.metrics import (
    PER_EVENT,
    PER_MINUTE,
    LeadTime,
    average_precision,
    classification_metrics,
    first_warning,
    format_lead_time_note,
    lead_time_stats,
    lead_time_v1,
    prefix_trajectory,
    roc_auc,
    score_trajectory,
)
from rugwarn.models import RANDOM_FOREST, DecisionTree, TrainedModel, train_random_forest

T = 1_700_000_000


def test_perfect_separation():
    r = classification_metrics([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
    assert (r.accuracy, r.precision, r.recall, r.f1, r.auc, r.pr_auc) == (1.0,) * 6
    assert (r.tp, r.fp, r.fn, r.tn) == (2, 0, 0, 2)


def test_constant_scores():
    y = [0, 1, 1, 0, 1]
    assert roc_auc(y, [0.3] * 5) == 0.5
    assert average_precision(y, [0.3] * 5) == pytest.approx(3 / 5)


def test_zero_division_conventions():
    r = classification_metrics([0, 1, 1], [0.1, 0.2, 0.3], tau=0.5)
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    assert r.accuracy == pytest.approx(1 / 3)


def test_single_class_undefined_ranking():
    r = classification_metrics([1, 1], [0.2, 0.9])
    assert r.auc is None and r.pr_auc is None and r.recall == 0.5
    with pytest.raises(DegenerateLabels):
        roc_auc([0, 0], [0.1, 0.2])
    with pytest.raises(DegenerateLabels):
        average_precision([1, 1], [0.1, 0.2])


def test_strict_threshold():
    r = classification_metrics([1, 0], [0.5, 0.5], tau=0.5)
    assert r.tp == 0 and r.tn == 1


def test_input_validation():
    with pytest.raises(ValueError):
        classification_metrics([0, 1], [0.1])
    with pytest.raises(ValueError):
        roc_auc([0, 2], [0.1, 0.2])


def test_random_thirty_vs_oracles():
    rng = random.Random(0)
    for _ in range(20):
        y = [rng.randrange(2) for _ in range(30)]
        if len(set(y)) < 2:
            continue
        s = [round(rng.random(), 1) for _ in range(30)]
        assert roc_auc(y, s) == pytest.approx(auc_pairs(y, s), abs=1e-12)
        assert average_precision(y, s) == pytest.approx(ap_sweep(y, s), abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=2, max_size=40))
def test_confusion_consistency(pairs):
    y = [a for a, _ in pairs]
    s = [b for _, b in pairs]
    r = classification_metrics(y, s, 0.4)
    assert r.n == len(y)
    assert r.precision == (r.tp / (r.tp + r.fp) if r.tp + r.fp else 0.0)
    assert r.recall == (r.tp / (r.tp + r.fn) if r.tp + r.fn else 0.0)
    if r.precision + r.recall:
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 20)), min_size=2, max_size=40))
def test_auc_monotone_transform_invariant(pairs):
    y = [a for a, _ in pairs]
    if len(set(y)) < 2:
        return
    s = np.array([b for _, b in pairs], dtype=float)
    assert roc_auc(y, s) == pytest.approx(roc_auc(y, np.exp(s / 3) * 7 - 2), abs=1e-12)
    assert average_precision(y, s) == pytest.approx(average_precision(y, s**3 + 1), abs=1e-12)


def test_perfect_ranking_ap_is_one():
    assert average_precision([0, 1, 0, 1], [0.1, 0.9, 0.2, 0.8]) == 1.0


# ---- lead time ----


def constant_model(p):
    tree = DecisionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([p]), np.array([1.0]))
    return TrainedModel(RANDOM_FOREST, list(FEATURE_NAMES), threshold=0.5, trees=[tree])


def token(n=40, step=25):
    recs = tuple(rec(f"0x{i % 7}", f"0x{(i * 3) % 11}", 1.0 + i, T + step * i) for i in range(n))
    return TokenDataset(TOKEN, recs, "high_risk")


def test_always_warning_model_per_event():
    ds = token()
    lt = lead_time_v1(constant_model(1.0), ds, eval_grid=PER_EVENT)
    assert lt.t_warning == ds.records[0].timestamp
    assert lt.hours == (ds.records[-1].timestamp - ds.records[0].timestamp) / 3600
    assert lt.approximated and not lt.late


def test_always_warning_model_per_minute():
    ds = token()
    lt = lead_time_v1(constant_model(1.0), ds)
    first_minute = ds.records[0].timestamp // 60
    last_in_minute = max(r.timestamp for r in ds.records if r.timestamp // 60 == first_minute)
    assert lt.t_warning == last_in_minute


def test_never_warning_model():
    assert lead_time_v1(constant_model(0.0), token()) is None


def test_event_file_overrides_last_record():
    ds = token()
    t_star = ds.records[-1].timestamp + 7200
    lt = lead_time_v1(constant_model(1.0), ds, eval_grid=PER_EVENT, events={TOKEN: t_star})
    assert not lt.approximated
    assert lt.hours == (t_star - ds.records[0].timestamp) / 3600


def test_late_warning_kept_negative():
    lt = LeadTime(TOKEN, T + 100, T, approximated=False)
    assert lt.hours < 0 and lt.late


def test_empty_dataset():
    with pytest.raises(EmptyInput):
        lead_time_v1(constant_model(1.0), TokenDataset(TOKEN, (), "high_risk"))


def test_grid_definitions():
    ds = token(30, step=20)
    t_ev, v_ev = prefix_trajectory(ds.records, PER_EVENT)
    t_min, v_min = prefix_trajectory(ds.records, PER_MINUTE)
    assert len(t_ev) == 30
    assert len(t_min) == len({r.timestamp // 60 for r in ds.records})
    assert v_min[-1] == v_ev[-1]
    with pytest.raises(ValueError):
        prefix_trajectory(ds.records, "hourly")


def test_known_crossing():
    ds = token(60, step=30)
    times = np.array([r.timestamp for r in ds.records])
    scores = np.linspace(0, 1, 60)
    k = int(np.argmax(scores > 0.5))
    assert first_warning(times, scores, 0.5) == times[k]
    assert first_warning(times, scores, 1.0) is None


def test_lead_time_non_increasing_in_tau():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 12))
    y = (X[:, 0] > 0).astype(int)
    m = train_random_forest(X, y, list(FEATURE_NAMES), n_trees=10)
    ds = token(120, step=13)
    times, scores = score_trajectory(m, ds.records)
    prev = np.inf
    for tau in np.linspace(0, 1, 21):
        lt = lead_time_v1(m, ds, tau=tau)
        h = -np.inf if lt is None else lt.hours
        assert h <= prev
        prev = h


def test_stats_single_and_random():
    assert lead_time_stats([1.0]) == {"n": 1, "mean": 1.0, "median": 1.0, "min": 1.0, "max": 1.0}
    rng = random.Random(4)
    vals = [rng.uniform(-2, 40) for _ in range(25)]
    s = lead_time_stats(vals + [None, None])
    assert s["n"] == 25
    assert s["mean"] == pytest.approx(statistics.fmean(vals))
    assert s["median"] == statistics.median(vals)
    assert (s["min"], s["max"]) == (min(vals), max(vals))
    assert set(s) == {"n", "mean", "median", "min", "max"}


def test_stats_empty_and_note():
    s = lead_time_stats([])
    assert s["n"] == 0 and s["mean"] is None
    assert format_lead_time_note(s) == "Lead Time (v1): n=0"
    note = format_lead_time_note(lead_time_stats([1.0, 3.0]))
    assert "n=2" in note and "mean=2.0000 h" in note and "median=2.0000 h" in note
