"""Classification metrics, ranking metrics and Lead Time (v1)."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, EmptyInput
from .features import PATTERN_NAMES, FeatureAccumulator
from .patterns import PatternAccumulator

PER_MINUTE = "per_minute"
PER_EVENT = "per_event"


@dataclass
class EvaluationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    pr_auc: float | None
    tp: int
    fp: int
    fn: int
    tn: int
    lead_times: list = field(default_factory=list)
    lead_time_stats: dict | None = None

    @property
    def n(self):
        return self.tp + self.fp + self.fn + self.tn


def _validate(y_true, scores):
    y = np.asarray(y_true).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("y_true and scores must be 1-D and of equal length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("y_true must be 0/1")
    return y, s


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney AUC with average ranks for tied scores."""
    y, s = _validate(y_true, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both classes")
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(y_true, scores) -> float:
    """Step-wise PR area: sum of (R_k - R_{k-1}) * P_k over distinct score cut-offs."""
    y, s = _validate(y_true, scores)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateLabels("PR-AUC needs both classes")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp = np.cumsum(y[order])
    # one operating point per distinct score: the last position of each tie group
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s) - 1]
    tp = tp[last]
    predicted = last + 1
    precision = tp / predicted
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def confusion(y_true, scores, tau):
    y, s = _validate(y_true, scores)
    pred = s > tau
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    return tp, fp, fn, tn


def classification_metrics(y_true, scores, tau=0.5) -> EvaluationReport:
    """Thresholded (score > tau) and ranking metrics.

    Zero denominators give 0 for precision, recall and F1. AUC and PR-AUC are
    None when only one class is present.
    """
    tp, fp, fn, tn = confusion(y_true, scores, tau)
    n = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    try:
        auc = roc_auc(y_true, scores)
        pr_auc = average_precision(y_true, scores)
    except DegenerateLabels:
        auc = pr_auc = None
    return EvaluationReport(
        accuracy=(tp + tn) / n if n else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc,
        pr_auc=pr_auc,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


@dataclass
class LeadTime:
    token_address: str
    t_warning: int | None
    t_rugpull: int
    approximated: bool

    @property
    def hours(self) -> float | None:
        if self.t_warning is None:
            return None
        return (self.t_rugpull - self.t_warning) / 3600.0

    @property
    def late(self) -> bool:
        h = self.hours
        return h is not None and h < 0


def prefix_trajectory(records, grid=PER_MINUTE, imbalance="mean", pattern_params=None):
    """Features of growing prefixes.

    ``per_event`` evaluates after every record; ``per_minute`` after the last
    record of each active minute. Returns ``(timestamps, vectors)`` where each
    timestamp is the last record time of its prefix, i.e. when the score
    becomes available. With ``pattern_params`` (window_minutes, max_cycle_len)
    every vector also carries the prefix pattern scores.
    """
    if grid not in (PER_MINUTE, PER_EVENT):
        raise ValueError(f"unknown evaluation grid {grid!r}")
    acc = FeatureAccumulator(imbalance)
    pacc = PatternAccumulator(**pattern_params) if pattern_params is not None else None
    times, vectors = [], []
    n = len(records)
    for i, r in enumerate(records):
        acc.add(r)
        if pacc is not None:
            pacc.add(r)
        if grid == PER_EVENT or i == n - 1 or records[i + 1].timestamp // 60 != r.timestamp // 60:
            times.append(r.timestamp)
            vec = acc.snapshot()
            if pacc is not None:
                vec.patterns = pacc.snapshot()
            vectors.append(vec)
    return times, vectors


def score_trajectory(model, records, grid=PER_MINUTE, imbalance="mean", pattern_params=None):
    if pattern_params is None and any(c in PATTERN_NAMES for c in model.feature_columns):
        pattern_params = {}
    times, vectors = prefix_trajectory(records, grid, imbalance, pattern_params)
    X = np.array([v.values(model.feature_columns) for v in vectors], dtype=np.float64)
    return np.asarray(times), model.predict_proba(X)


def first_warning(times, scores, tau):
    hits = np.nonzero(np.asarray(scores) > tau)[0]
    return int(times[hits[0]]) if len(hits) else None


def lead_time_v1(model, dataset, tau=None, eval_grid=PER_MINUTE, events=None, imbalance="mean",
                 pattern_params=None):
    """Hours from the first above-threshold prefix score to the rug pull.

    The rug-pull time comes from ``events`` (token -> unix seconds) when the
    token is annotated, otherwise the last observed transfer stands in for it
    and the result is marked approximated. Returns None when no prefix warns.
    """
    if len(dataset.records) == 0:
        raise EmptyInput(f"{dataset.token_address}: empty dataset")
    tau = model.threshold if tau is None else tau
    times, scores = score_trajectory(model, dataset.records, eval_grid, imbalance, pattern_params)
    return _lead_time_from_scores(dataset, times, scores, tau, events)


def rugpull_time(dataset, events=None):
    """``(t_rugpull, approximated)``: the annotated event, else the last observed transfer."""
    events = events or {}
    if dataset.token_address in events:
        return int(events[dataset.token_address]), False
    return int(dataset.records[-1].timestamp), True


def _lead_time_from_scores(dataset, times, scores, tau, events=None):
    t_warn = first_warning(times, scores, tau)
    if t_warn is None:
        return None
    t_rug, approximated = rugpull_time(dataset, events)
    return LeadTime(dataset.token_address, t_warn, t_rug, approximated)


def lead_time_stats(hours) -> dict:
    """n / mean / median / min / max over the present (non-None) entries."""
    vals = [float(h) for h in hours if h is not None]
    if not vals:
        return {"n": 0, "mean": None, "median": None, "min": None, "max": None}
    return {
        "n": len(vals),
        "mean": statistics.fmean(vals),
        "median": statistics.median(vals),
        "min": min(vals),
        "max": max(vals),
    }


def format_lead_time_note(stats) -> str:
    if not stats["n"]:
        return "Lead Time (v1): n=0"
    return (
        f"Lead Time (v1): n={stats['n']}, mean={stats['mean']:.4f} h, median={stats['median']:.4f} h, "
        f"min={stats['min']:.4f} h, max={stats['max']:.4f} h"
    )
