"""Experiment protocol: samples, split, LR vs RF comparison, ablation, error profile."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSplit
from .features import DEFAULT_GROUPS, PATTERN_NAMES, compute_features, feature_matrix, selected_columns
from .metrics import (
    PER_MINUTE,
    EvaluationReport,
    _lead_time_from_scores,
    classification_metrics,
    lead_time_stats,
    score_trajectory,
)
from .patterns import DEFAULT_MAX_CYCLE_LEN, DEFAULT_WINDOW_MINUTES, score_patterns
from .models import LOGREG, RANDOM_FOREST, predict_proba, train_logreg, train_random_forest

MODEL_NAMES = {LOGREG: "logistic_regression", RANDOM_FOREST: "random_forest"}
ABLATION_SETTINGS = (
    ("full", ()),
    ("w/o trade", ("trade",)),
    ("w/o address", ("address",)),
    ("w/o contract", ("contract",)),
)


@dataclass
class ExperimentConfig:
    sample_unit: str = "window"
    window_size: int = 500
    stride: int = 250
    min_window: int = 50
    train_fraction: float = 0.7
    group_by_token: bool = False
    seed: int = 42
    threshold: float = 0.5
    eval_grid: str = PER_MINUTE
    imbalance: str = "mean"
    groups: dict = field(default_factory=lambda: dict(DEFAULT_GROUPS))
    logreg: dict = field(default_factory=dict)
    forest: dict = field(default_factory=dict)
    threads: int = 1
    with_patterns: bool = False
    pattern_window: int = DEFAULT_WINDOW_MINUTES
    max_cycle_len: int = DEFAULT_MAX_CYCLE_LEN

    @property
    def pattern_params(self):
        if not self.with_patterns:
            return None
        return {"window_minutes": self.pattern_window, "max_cycle_len": self.max_cycle_len}

    def __post_init__(self):
        if self.sample_unit not in ("window", "token"):
            raise ValueError(f"unknown sample unit {self.sample_unit!r}")
        if self.window_size <= 0 or not 0 < self.stride <= self.window_size:
            raise ValueError("need window_size > 0 and 0 < stride <= window_size")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")


@dataclass
class Sample:
    vector: object
    label: int
    token_address: str
    window_id: int
    start: int
    end: int
    t_start: int
    t_end: int

    @property
    def sample_id(self):
        return f"{self.token_address}:{self.window_id}"


def window_bounds(n, size, stride, min_window=50):
    """Record-index windows ``[i*stride, i*stride + size)``, plus one trailing partial window."""
    bounds = [(s, s + size) for s in range(0, n - size + 1, stride)]
    next_start = bounds[-1][0] + stride if bounds else 0
    covered = bounds[-1][1] if bounds else 0
    if covered < n and n - next_start >= min_window:
        bounds.append((next_start, n))
    return bounds


def build_samples(datasets, config: ExperimentConfig = ExperimentConfig()) -> list[Sample]:
    if isinstance(datasets, dict):
        datasets = [datasets[k] for k in sorted(datasets)]
    samples = []
    for ds in datasets:
        recs = ds.records
        if not recs:
            raise ValueError(f"{ds.token_address}: empty dataset")
        if config.sample_unit == "token":
            bounds = [(0, len(recs))]
        else:
            bounds = window_bounds(len(recs), config.window_size, config.stride, config.min_window)
        for wid, (a, b) in enumerate(bounds):
            window = recs[a:b]
            vec = compute_features(window, config.imbalance)
            if config.with_patterns:
                vec.patterns = score_patterns(window, config.pattern_window, config.max_cycle_len)
            samples.append(
                Sample(vec, ds.binary_label, ds.token_address, wid, a, b, window[0].timestamp, window[-1].timestamp)
            )
    return samples


def stratified_split(labels, train_fraction=0.7, seed=42, groups=None):
    """Per-class shuffled split; each class keeps >= 1 unit per side when it has >= 2.

    With ``groups`` the units are groups (e.g. tokens): every sample of a group
    lands on the same side. Groups must not mix labels.
    """
    labels = np.asarray(labels)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7])))
    if groups is None:
        unit_of = np.arange(len(labels))
    else:
        _, unit_of = np.unique(np.asarray(groups), return_inverse=True)
    n_units = unit_of.max() + 1 if len(labels) else 0
    unit_label = np.zeros(n_units, dtype=labels.dtype)
    unit_label[unit_of] = labels
    if groups is not None and np.any(unit_label[unit_of] != labels):
        raise ValueError("a group mixes labels")
    train_units = []
    for cls in (0, 1):
        idx = np.nonzero(unit_label == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        k = int(round(train_fraction * len(idx)))
        if len(idx) >= 2:
            k = min(max(k, 1), len(idx) - 1)
        train_units.extend(idx[:k].tolist())
    in_train = np.isin(unit_of, train_units)
    return np.nonzero(in_train)[0].astype(np.int64), np.nonzero(~in_train)[0].astype(np.int64)


def _check_split(y, train, test):
    for name, part in (("train", train), ("test", test)):
        if len(np.unique(y[part])) < 2:
            raise DegenerateSplit(f"{name} split lacks one class")


def _train(kind, X, y, columns, config):
    if kind == LOGREG:
        return train_logreg(X, y, columns, seed=config.seed, threshold=config.threshold, **config.logreg)
    return train_random_forest(X, y, columns, seed=config.seed, threshold=config.threshold,
                               threads=config.threads, **config.forest)


@dataclass
class MainResult:
    train_idx: np.ndarray
    test_idx: np.ndarray
    models: dict
    scores: dict
    reports: dict
    lead_times: dict


def split_samples(samples, config):
    y = np.array([s.label for s in samples])
    if min(np.sum(y == 0), np.sum(y == 1)) < 2:
        raise DegenerateSplit("need at least two samples per class")
    groups = [s.token_address for s in samples] if config.group_by_token else None
    train, test = stratified_split(y, config.train_fraction, config.seed, groups)
    _check_split(y, train, test)
    return train, test


def lead_times_for(model, samples, test_idx, datasets, config, events=None):
    """Lead time of every high-risk token that contributes a test sample."""
    tokens = sorted({samples[i].token_address for i in test_idx if samples[i].label == 1})
    out = []
    for token in tokens:
        ds = datasets[token]
        times, scores = score_trajectory(model, ds.records, config.eval_grid, config.imbalance,
                                         config.pattern_params)
        out.append((token, _lead_time_from_scores(ds, times, scores, config.threshold, events)))
    return out


def run_main_comparison(samples, config: ExperimentConfig = ExperimentConfig(), datasets=None, events=None,
                        split=None) -> MainResult:
    """Train LR and RF on one split and evaluate both on its test side."""
    X, y, columns = feature_matrix([(s.vector, s.label) for s in samples], groups=config.groups,
                                   with_patterns=config.with_patterns)
    train, test = split if split is not None else split_samples(samples, config)
    models, scores, reports, leads = {}, {}, {}, {}
    for kind in (LOGREG, RANDOM_FOREST):
        model = _train(kind, X[train], y[train], columns, config)
        s = predict_proba(model, X[test], columns)
        report = classification_metrics(y[test], s, config.threshold)
        if datasets is not None:
            leads[kind] = lead_times_for(model, samples, test, datasets, config, events)
            report.lead_times = [(tok, lt.hours if lt else None) for tok, lt in leads[kind]]
            report.lead_time_stats = lead_time_stats(h for _, h in report.lead_times)
        models[kind], scores[kind], reports[kind] = model, s, report
    return MainResult(train, test, models, scores, reports, leads)


@dataclass
class AblationResult:
    setting: str
    n_features: int
    precision: float
    recall: float
    f1: float
    auc: float | None
    pr_auc: float | None
    delta_pr_auc: float | None = None

    def to_dict(self):
        return dict(self.__dict__)


def run_ablation(samples, config: ExperimentConfig = ExperimentConfig(), split=None) -> list[AblationResult]:
    """Random forest with each feature group removed, on one shared split."""
    train, test = split if split is not None else split_samples(samples, config)
    pairs = [(s.vector, s.label) for s in samples]
    results = []
    for name, mask in ABLATION_SETTINGS:
        X, y, columns = feature_matrix(pairs, group_mask=mask, groups=config.groups,
                                       with_patterns=config.with_patterns)
        model = _train(RANDOM_FOREST, X[train], y[train], columns, config)
        rep = classification_metrics(y[test], predict_proba(model, X[test], columns), config.threshold)
        results.append(AblationResult(name, len(columns), rep.precision, rep.recall, rep.f1, rep.auc, rep.pr_auc))
    full = results[0].pr_auc
    for r in results:
        r.delta_pr_auc = None if full is None or r.pr_auc is None else r.pr_auc - full
    results[0].delta_pr_auc = 0.0 if full is not None else None
    return results


def error_profile(y_true, scores, tau, sample_ids) -> dict:
    """False positives and negatives, most confident mistakes first."""
    y = np.asarray(y_true).astype(int)
    s = np.asarray(scores, dtype=np.float64)
    pred = s > tau

    def listing(mask):
        rows = [
            {"sample_id": sample_ids[i], "score": float(s[i]), "distance": float(abs(s[i] - tau))}
            for i in np.nonzero(mask)[0]
        ]
        return sorted(rows, key=lambda r: (-r["distance"], r["sample_id"]))

    fps = listing(pred & (y == 0))
    fns = listing(~pred & (y == 1))
    return {"fp": len(fps), "fn": len(fns), "threshold": tau, "false_positives": fps, "false_negatives": fns}


RESULT_FIELDS = ("accuracy", "precision", "recall", "f1", "auc", "pr_auc", "lead_time_h")


def report_block(report: EvaluationReport) -> dict:
    """One results row: six metrics plus mean lead time in hours."""
    stats = report.lead_time_stats or lead_time_stats([])
    row = {k: getattr(report, k) for k in RESULT_FIELDS[:-1]}
    row["lead_time_h"] = stats["mean"]
    return row


def columns_used(config):
    cols = selected_columns((), config.groups)
    return cols + list(PATTERN_NAMES) if config.with_patterns else cols
