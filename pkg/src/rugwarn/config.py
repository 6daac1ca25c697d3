"""Run configuration: one versioned JSON document driving every CLI stage."""

from __future__ import annotations

import json
import os
from dataclasses import replace
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigInvalid
from .experiments import ExperimentConfig
from .features import DEFAULT_GROUPS, FEATURE_NAMES
from .ingest import DEFAULT_CAP, FIELDS
from .synth import ScenarioSpec

CONFIG_VERSION = 1
ENV_PREFIX = "RUGWARN_"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Section):
    input_dir: Optional[str] = Field(None, description="raw CSV directory; unset means the synth stage output")
    output_dir: str = Field("out", description="artifact root")
    label_file: Optional[str] = Field(None, description="token_address,label CSV")
    event_file: Optional[str] = Field(None, description="token_address,t_rugpull_unix CSV")


class IngestConfig(_Section):
    cap: int = Field(DEFAULT_CAP, gt=0)
    column_map: dict[str, str] = Field(default_factory=dict, description="logical field -> CSV column")
    quantity_mode: Literal["float", "decimal"] = "float"

    @field_validator("column_map")
    @classmethod
    def _known_fields(cls, v):
        unknown = set(v) - set(FIELDS)
        if unknown:
            raise ValueError(f"unknown logical fields {sorted(unknown)}")
        return v


class PatternConfig(_Section):
    window_minutes: int = Field(60, gt=0)
    max_cycle_len: int = Field(5, ge=3, le=6)


class FeatureConfig(_Section):
    groups: dict[str, list[str]] = Field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GROUPS.items()})
    imbalance: Literal["mean", "weighted"] = "mean"
    with_patterns: bool = Field(False, description="append the three pattern scores as model inputs")

    @field_validator("groups")
    @classmethod
    def _partition(cls, v):
        if set(v) != set(DEFAULT_GROUPS):
            raise ValueError(f"groups must be exactly {sorted(DEFAULT_GROUPS)}")
        names = [n for cols in v.values() for n in cols]
        if sorted(names) != sorted(FEATURE_NAMES):
            raise ValueError("groups must partition the twelve features")
        return v


class LogregConfig(_Section):
    lr: float = Field(0.1, gt=0)
    max_epochs: int = Field(5000, gt=0)
    tol: float = Field(1e-8, ge=0)
    l2: float = Field(0.0, ge=0)
    class_weight: Optional[Literal["balanced"]] = None


class ForestConfig(_Section):
    n_trees: int = Field(100, gt=0)
    max_depth: Optional[int] = Field(None, gt=0)
    min_samples_leaf: int = Field(1, gt=0)
    mtry: Optional[int] = Field(None, gt=0, description="unset means floor(sqrt(d))")
    class_weight: Optional[Literal["balanced"]] = None


class ModelsConfig(_Section):
    logreg: LogregConfig = Field(default_factory=LogregConfig)
    random_forest: ForestConfig = Field(default_factory=ForestConfig)


class ExperimentSection(_Section):
    sample_unit: Literal["window", "token"] = "window"
    window_size: int = Field(500, gt=0)
    stride: int = Field(250, gt=0)
    min_window: int = Field(50, gt=0)
    train_fraction: float = Field(0.7, gt=0, lt=1)
    group_by_token: bool = False
    eval_grid: Literal["per_minute", "per_event"] = "per_minute"

    @model_validator(mode="after")
    def _stride(self):
        if self.stride > self.window_size:
            raise ValueError("stride must not exceed window_size")
        return self


class RunConfig(_Section):
    version: Literal[1] = CONFIG_VERSION
    seed: int = Field(42, ge=0, lt=2**64)
    threads: int = Field(1, ge=1)
    threshold: float = Field(0.5, ge=0, le=1)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    patterns: PatternConfig = Field(default_factory=PatternConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    models: ModelsConfig = Field(default_factory=ModelsConfig)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    synth: ScenarioSpec = Field(default_factory=ScenarioSpec, description="synthetic scenario; its seed follows the global seed")

    @model_validator(mode="after")
    def _sync_seed(self):
        if self.synth.seed != self.seed:
            self.synth = replace(self.synth, seed=self.seed)
        self.synth.validate()
        return self

    @property
    def out(self) -> Path:
        return Path(self.paths.output_dir)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")

    def experiment_config(self) -> ExperimentConfig:
        e = self.experiment
        forest = self.models.random_forest.model_dump()
        return ExperimentConfig(
            sample_unit=e.sample_unit,
            window_size=e.window_size,
            stride=e.stride,
            min_window=e.min_window,
            train_fraction=e.train_fraction,
            group_by_token=e.group_by_token,
            seed=self.seed,
            threshold=self.threshold,
            eval_grid=e.eval_grid,
            imbalance=self.features.imbalance,
            groups={k: tuple(v) for k, v in self.features.groups.items()},
            logreg=self.models.logreg.model_dump(),
            forest=forest,
            threads=self.threads,
            with_patterns=self.features.with_patterns,
            pattern_window=self.patterns.window_minutes,
            max_cycle_len=self.patterns.max_cycle_len,
        )


def _set_path(tree: dict, dotted: list[str], value):
    node = tree
    for key in dotted[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigInvalid(f"cannot override below non-object key {key!r}")
    node[dotted[-1]] = value


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ=None) -> dict:
    """``RUGWARN_SEED=7`` or ``RUGWARN_MODELS__RANDOM_FOREST__N_TREES=50``; values parse as JSON when they can."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX) or key == ENV_PREFIX + "CONFIG":
            continue
        dotted = key[len(ENV_PREFIX):].lower().split("__")
        if dotted == ["out"]:
            dotted = ["paths", "output_dir"]
        _set_path(out, dotted, _parse_env_value(raw))
    return out


def _merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k] = _merge(merged[k], v)
        else:
            merged[k] = v
    return merged


def load_config(path=None, overrides=None, environ=None) -> RunConfig:
    """File, then environment, then explicit overrides (CLI flags), later winning."""
    data: dict = {}
    environ = os.environ if environ is None else environ
    path = path or environ.get(ENV_PREFIX + "CONFIG")
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigInvalid(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid(f"{p}: top level must be an object")
    data = _merge(data, env_overrides(environ))
    data = _merge(data, overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigInvalid(_summarize(exc)) from exc
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc


def _summarize(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def config_schema() -> dict:
    schema = RunConfig.model_json_schema()
    schema["$id"] = f"rugwarn-config-v{CONFIG_VERSION}"
    return schema


def default_config_lines() -> list[str]:
    """Flattened ``key = value`` defaults, for help text."""
    lines = []

    def walk(prefix, node):
        if isinstance(node, dict) and node and not (prefix.endswith("groups") or prefix.endswith("column_map")):
            for k, v in node.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        else:
            lines.append(f"  {prefix} = {json.dumps(node)}")

    walk("", RunConfig().resolved())
    return lines
