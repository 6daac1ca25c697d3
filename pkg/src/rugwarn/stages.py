"""Pipeline stages. Each reads only earlier stages' artifacts under the output root."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ColumnMismatch, ConfigInvalid, MissingInput, RugwarnError, StageFailure
from .experiments import (
    MODEL_NAMES,
    Sample,
    _train,
    build_samples,
    columns_used,
    error_profile,
    lead_times_for,
    report_block,
    run_ablation,
    split_samples,
)
from .features import FEATURE_NAMES, PATTERN_NAMES, RiskVector, feature_matrix
from .ingest import (
    DEFAULT_SCHEMA,
    build_datasets,
    consistency_check,
    load_events,
    load_labels,
    parse_csv,
    read_datasets,
    write_datasets,
)
from .metrics import classification_metrics, first_warning, lead_time_stats, rugpull_time, score_trajectory
from .models import LOGREG, RANDOM_FOREST, TrainedModel, predict_proba
from .patterns import PatternScores, score_patterns
from .synth import generate, write_corpus

log = logging.getLogger("rugwarn")

STAGES = ("synth", "ingest", "patterns", "features", "train", "evaluate", "ablate", "leadtime")
MODEL_KINDS = (LOGREG, RANDOM_FOREST)
LEAD_TIME_COLUMNS = ("model", "token_address", "t_warning", "t_rugpull", "hours", "approximation_flag", "late_warning")
INT_FEATURES = ("tx_count", "unique_from", "unique_to", "active_minutes")
SAMPLE_COLUMNS = ("token_address", "window_id", "label", "start", "end", "t_start", "t_end")


class Layout:
    """Artifact locations under one output root."""

    def __init__(self, out):
        self.root = Path(out)
        self.synth = self.root / "synth"
        self.synth_raw = self.synth / "raw"
        self.datasets = self.root / "datasets"
        self.patterns = self.root / "patterns"
        self.features = self.root / "features.csv"
        self.split = self.root / "split.json"
        self.models = self.root / "models"
        self.metrics = self.root / "metrics.json"
        self.error_profile = self.root / "error_profile.json"
        self.ablation = self.root / "ablation.json"
        self.lead_times = self.root / "lead_times.csv"
        self.manifest = self.root / "run.json"

    def model(self, kind):
        return self.models / f"{kind}.json"


def run_block(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "config": cfg.resolved()}


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path, obj):
    _atomic_write(Path(path), json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"missing input artifact: {path}")
    return json.loads(path.read_text())


def _num(x):
    return "" if x is None else repr(x) if isinstance(x, float) else str(x)


def _require(path: Path, hint: str):
    if not path.exists():
        raise MissingInput(f"missing input artifact: {path} (run `{hint}` first)")


# ---- synth / ingest / patterns --------------------------------------------------------------


def stage_synth(cfg: RunConfig) -> dict:
    lay = Layout(cfg.out)
    corpus = generate(cfg.synth)
    write_corpus(corpus, lay.synth)
    write_json(lay.synth / "ground_truth.json", {**corpus.ground_truth(), "run": run_block(cfg)})
    return {"tokens": len(corpus.datasets), "dir": str(lay.synth)}


def _input_dir(cfg, lay) -> Path:
    if cfg.paths.input_dir:
        d = Path(cfg.paths.input_dir)
        if not d.is_dir():
            raise MissingInput(f"input directory not found: {d}")
        return d
    _require(lay.synth_raw, "rugwarn synth")
    return lay.synth_raw


def _side_file(cfg, lay, configured, synth_name):
    if configured:
        p = Path(configured)
        if not p.is_file():
            raise MissingInput(f"file not found: {p}")
        return p
    fallback = lay.synth / synth_name
    if not cfg.paths.input_dir and fallback.is_file():
        return fallback
    return None


def stage_ingest(cfg: RunConfig) -> dict:
    lay = Layout(cfg.out)
    src = _input_dir(cfg, lay)
    files = sorted(src.glob("*.csv"))
    if not files:
        raise MissingInput(f"no CSV files in {src}")
    schema = {**DEFAULT_SCHEMA, **cfg.ingest.column_map}
    chunks, row_errors = [], {}
    for f in files:
        parsed = parse_csv(f, schema, cfg.ingest.quantity_mode)
        chunks.append(parsed.records)
        if parsed.error_count:
            row_errors[f.name] = {
                "count": parsed.error_count,
                "first": [{"line": e.line, "reason": e.reason} for e in parsed.errors[:20]],
            }
            log.warning("%s: skipped %d malformed rows", f.name, parsed.error_count)
    label_path = _side_file(cfg, lay, cfg.paths.label_file, "labels.csv")
    if label_path is None:
        log.warning("no label file given; every token is labeled unknown (trained as non_high_risk)")
        labels = {}
    else:
        labels = load_labels(label_path)
    datasets = build_datasets(chunks, labels, cfg.ingest.cap)
    summary = write_datasets(datasets, lay.datasets, extra={"run": run_block(cfg)})
    quality = {t: consistency_check(ds).to_dict() for t, ds in datasets.items()}
    write_json(lay.datasets / "quality_report.json", {
        "label_file": str(label_path) if label_path else None,
        "row_errors": row_errors,
        "tokens": quality,
        "run": run_block(cfg),
    })
    return {"tokens": summary["n_tokens"], "records": summary["total_records"], "dir": str(lay.datasets)}


def load_datasets(cfg: RunConfig):
    lay = Layout(cfg.out)
    _require(lay.datasets / "dataset_summary.json", "rugwarn ingest")
    return read_datasets(lay.datasets, cfg.ingest.quantity_mode)


def stage_patterns(cfg: RunConfig) -> dict:
    lay = Layout(cfg.out)
    datasets = load_datasets(cfg)
    for token, ds in datasets.items():
        scores = score_patterns(ds.records, cfg.patterns.window_minutes, cfg.patterns.max_cycle_len)
        write_json(lay.patterns / f"{token}.patterns.json",
                   {"token_address": token, **scores.to_dict(), "run": run_block(cfg)})
    return {"tokens": len(datasets), "dir": str(lay.patterns)}


# ---- features ---------------------------------------------------------------------------------


def stage_features(cfg: RunConfig) -> dict:
    lay = Layout(cfg.out)
    datasets = load_datasets(cfg)
    ecfg = cfg.experiment_config()
    samples = build_samples(datasets, ecfg)
    cols = columns_used(ecfg)
    lines = []
    for s in samples:
        meta = [s.token_address, s.window_id, datasets[s.token_address].label, s.start, s.end, s.t_start, s.t_end]
        vals = [getattr(s.vector, c) if c in INT_FEATURES else s.vector.values([c])[0] for c in cols]
        lines.append([_num(v) for v in meta + vals])
    _write_csv(lay.features, list(SAMPLE_COLUMNS) + cols, lines)
    return {"samples": len(samples), "columns": len(cols), "path": str(lay.features)}


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def load_samples(cfg: RunConfig) -> list[Sample]:
    lay = Layout(cfg.out)
    _require(lay.features, "rugwarn features")
    expected = list(SAMPLE_COLUMNS) + columns_used(cfg.experiment_config())
    with lay.features.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise ColumnMismatch(f"{lay.features} columns do not match the configured feature set; rerun `features`")
        rows = list(reader)
    n_meta = len(SAMPLE_COLUMNS)
    data_cols = expected[n_meta:]
    samples = []
    for row in rows:
        vals = dict(zip(data_cols, row[n_meta:]))
        kw = {n: float(vals[n]) for n in FEATURE_NAMES if n in vals}
        for n in FEATURE_NAMES:
            kw.setdefault(n, float("nan"))
        for n in INT_FEATURES:
            if n in vals:
                kw[n] = int(vals[n])
        vec = RiskVector(**kw)
        if all(p in vals for p in PATTERN_NAMES):
            vec.patterns = PatternScores(*(float(vals[p]) for p in PATTERN_NAMES),
                                         window_minutes=cfg.patterns.window_minutes,
                                         max_cycle_len=cfg.patterns.max_cycle_len)
        token, wid, label, start, end, t0, t1 = row[:n_meta]
        samples.append(Sample(vec, 1 if label == "high_risk" else 0, token, int(wid), int(start), int(end),
                              int(t0), int(t1)))
    if not samples:
        raise MissingInput(f"{lay.features} holds no samples")
    return samples


def _matrix(cfg, samples, group_mask=()):
    ecfg = cfg.experiment_config()
    return feature_matrix([(s.vector, s.label) for s in samples], group_mask, ecfg.groups, ecfg.with_patterns)


# ---- train / evaluate -----------------------------------------------------------------------


def stage_train(cfg: RunConfig) -> dict:
    lay = Layout(cfg.out)
    samples = load_samples(cfg)
    ecfg = cfg.experiment_config()
    train, test = split_samples(samples, ecfg)
    write_json(lay.split, {
        "train": [samples[i].sample_id for i in train],
        "test": [samples[i].sample_id for i in test],
        "train_fraction": ecfg.train_fraction,
        "group_by_token": ecfg.group_by_token,
        "run": run_block(cfg),
    })
    X, y, cols = _matrix(cfg, samples)
    for kind in MODEL_KINDS:
        model = _train(kind, X[train], y[train], cols, ecfg)
        write_json(lay.model(kind), {**model.to_dict(), "run": run_block(cfg)})
    return {"train": len(train), "test": len(test), "dir": str(lay.models)}


def load_split(cfg, samples):
    lay = Layout(cfg.out)
    _require(lay.split, "rugwarn train")
    split = read_json(lay.split)
    index = {s.sample_id: i for i, s in enumerate(samples)}
    try:
        train = np.array([index[k] for k in split["train"]], dtype=np.int64)
        test = np.array([index[k] for k in split["test"]], dtype=np.int64)
    except KeyError as exc:
        raise ColumnMismatch(f"split.json names unknown sample {exc}; rerun `train`") from exc
    return train, test


def load_models(cfg):
    lay = Layout(cfg.out)
    out = {}
    for kind in MODEL_KINDS:
        _require(lay.model(kind), "rugwarn train")
        out[kind] = TrainedModel.from_dict(read_json(lay.model(kind)))
    return out


def load_event_map(cfg):
    path = _side_file(cfg, Layout(cfg.out), cfg.paths.event_file, "events.csv")
    return load_events(path) if path else {}


def stage_evaluate(cfg: RunConfig) -> dict:
    lay = Layout(cfg.out)
    samples = load_samples(cfg)
    train, test = load_split(cfg, samples)
    models = load_models(cfg)
    datasets = load_datasets(cfg)
    events = load_event_map(cfg)
    ecfg = cfg.experiment_config()
    X, y, cols = _matrix(cfg, samples)
    ids = [samples[i].sample_id for i in test]
    blocks, stats, confusion, profiles = {}, {}, {}, {}
    for kind, model in models.items():
        scores = predict_proba(model, X[test], cols)
        report = classification_metrics(y[test], scores, cfg.threshold)
        leads = lead_times_for(model, samples, test, datasets, ecfg, events)
        report.lead_time_stats = lead_time_stats(lt.hours if lt else None for _, lt in leads)
        name = MODEL_NAMES[kind]
        blocks[name] = report_block(report)
        stats[name] = report.lead_time_stats
        confusion[name] = {"tp": report.tp, "fp": report.fp, "fn": report.fn, "tn": report.tn}
        profiles[name] = error_profile(y[test], scores, cfg.threshold, ids)
    write_json(lay.metrics, {
        "threshold": cfg.threshold,
        "n_train": len(train),
        "n_test": len(test),
        "n_test_positive": int(y[test].sum()),
        "models": blocks,
        "lead_time_stats": stats,
        "confusion": confusion,
        "run": run_block(cfg),
    })
    write_json(lay.error_profile, {"threshold": cfg.threshold, "models": profiles, "run": run_block(cfg)})
    return {"models": blocks, "path": str(lay.metrics)}


def stage_ablate(cfg: RunConfig) -> dict:
    lay = Layout(cfg.out)
    samples = load_samples(cfg)
    split = load_split(cfg, samples)
    results = run_ablation(samples, cfg.experiment_config(), split)
    write_json(lay.ablation, {
        "model": MODEL_NAMES[RANDOM_FOREST],
        "settings": [r.to_dict() for r in results],
        "run": run_block(cfg),
    })
    return {"settings": {r.setting: r.delta_pr_auc for r in results}, "path": str(lay.ablation)}


def stage_leadtime(cfg: RunConfig) -> dict:
    """One row per (model, high-risk token with a test sample); unwarned tokens leave the warning empty."""
    lay = Layout(cfg.out)
    samples = load_samples(cfg)
    _, test = load_split(cfg, samples)
    models = load_models(cfg)
    datasets = load_datasets(cfg)
    events = load_event_map(cfg)
    ecfg = cfg.experiment_config()
    tokens = sorted({samples[i].token_address for i in test if samples[i].label == 1})
    rows = []
    for kind, model in models.items():
        for token in tokens:
            ds = datasets[token]
            times, scores = score_trajectory(model, ds.records, ecfg.eval_grid, ecfg.imbalance, ecfg.pattern_params)
            t_warn = first_warning(times, scores, cfg.threshold)
            t_rug, approx = rugpull_time(ds, events)
            hours = None if t_warn is None else (t_rug - t_warn) / 3600.0
            late = hours is not None and hours < 0
            rows.append([MODEL_NAMES[kind], token, _num(t_warn), t_rug, _num(hours), int(approx), int(late)])
    _write_csv(lay.lead_times, LEAD_TIME_COLUMNS, rows)
    return {"rows": len(rows), "path": str(lay.lead_times)}


# ---- orchestration --------------------------------------------------------------------------

RUNNERS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "patterns": stage_patterns,
    "features": stage_features,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "ablate": stage_ablate,
    "leadtime": stage_leadtime,
}


def run_stage(name: str, cfg: RunConfig) -> dict:
    """Run one stage; unexpected failures come back as StageFailure naming the stage."""
    try:
        return RUNNERS[name](cfg)
    except (ConfigInvalid, MissingInput, StageFailure):
        raise
    except (RugwarnError, ValueError, OSError, KeyError) as exc:
        raise StageFailure(name, exc) from exc


def pipeline_stages(cfg: RunConfig) -> list[str]:
    head = [] if cfg.paths.input_dir else ["synth"]
    return head + list(STAGES[1:])


def run_pipeline(cfg: RunConfig) -> dict:
    return {name: run_stage(name, cfg) for name in pipeline_stages(cfg)}


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: RunConfig, command: str) -> Path:
    """``run.json``: the only artifact carrying a wall-clock field."""
    lay = Layout(cfg.out)
    artifacts = {}
    if lay.root.is_dir():
        for p in sorted(lay.root.rglob("*")):
            if p.is_file() and p != lay.manifest and not p.name.endswith(".tmp"):
                artifacts[p.relative_to(lay.root).as_posix()] = _digest(p)
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    write_json(lay.manifest, {
        "created_at": now.isoformat(timespec="seconds"),
        "command": command,
        "artifacts": artifacts,
        **run_block(cfg),
    })
    return lay.manifest
