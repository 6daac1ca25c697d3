"""Transfer CSV ingest: parse, merge/dedup, cap, and quality-check per-token datasets."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyFile, MalformedRow, MissingColumn

log = logging.getLogger(__name__)

FIELDS = ("token_address", "tx_hash", "from", "to", "quantity", "timestamp")
DEFAULT_SCHEMA = {name: name for name in FIELDS}
DEFAULT_CAP = 5000

HIGH_RISK = "high_risk"
NON_HIGH_RISK = "non_high_risk"
UNKNOWN = "unknown"
LABELS = (HIGH_RISK, NON_HIGH_RISK, UNKNOWN)


@dataclass(frozen=True)
class TransferRecord:
    token_address: str
    tx_hash: str
    from_addr: str
    to_addr: str
    # float by default; Decimal in exact mode. Floats lose digits past 2**53 base units.
    quantity: float | Decimal
    timestamp: int

    @property
    def key(self):
        """Composite dedup key."""
        return (self.tx_hash, self.from_addr, self.to_addr, self.quantity, self.timestamp)

    @property
    def sort_key(self):
        # quantity is the last resort so that the order is total over distinct keys
        return (self.timestamp, self.tx_hash, self.from_addr, self.to_addr, self.quantity)


@dataclass(frozen=True)
class TokenDataset:
    token_address: str
    records: tuple[TransferRecord, ...]
    label: str = UNKNOWN
    cap: int = DEFAULT_CAP

    def __len__(self):
        return len(self.records)

    @property
    def binary_label(self) -> int:
        # weak supervision: unknown trains as non_high_risk
        return 1 if self.label == HIGH_RISK else 0


@dataclass
class RowError:
    line: int
    reason: str


@dataclass
class ParseResult:
    records: list[TransferRecord]
    errors: list[RowError] = field(default_factory=list)

    @property
    def error_count(self) -> int:
        return len(self.errors)


def parse_timestamp(raw: str) -> int:
    """Unix seconds (integral) or ISO-8601; naive ISO values are taken as UTC."""
    text = raw.strip()
    try:
        value = float(text)
    except ValueError:
        pass
    else:
        if not math.isfinite(value) or value != int(value):
            raise MalformedRow(f"non-integral unix timestamp {raw!r}")
        return int(value)
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text.replace(" ", "T", 1))
    except ValueError:
        raise MalformedRow(f"unparseable timestamp {raw!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_quantity(raw: str, mode: str = "float") -> float | Decimal:
    try:
        value = Decimal(raw.strip())
    except InvalidOperation:
        raise MalformedRow(f"unparseable quantity {raw!r}") from None
    if not value.is_finite():
        raise MalformedRow(f"non-finite quantity {raw!r}")
    if value < 0:
        raise MalformedRow(f"negative quantity {raw!r}")
    if mode == "decimal":
        # normalize so 10.5 and 10.50 share a dedup key
        return value.normalize() if value else Decimal(0)
    if mode != "float":
        raise ValueError(f"unknown quantity mode {mode!r}")
    return float(value)


def _normalize_hex(raw: str | None, what: str) -> str:
    text = (raw or "").strip().lower()
    if not text:
        raise MalformedRow(f"missing {what}")
    return text


def parse_row(row: dict, schema: dict, quantity_mode: str = "float") -> TransferRecord:
    values = {name: row.get(schema[name]) for name in FIELDS}
    for name in ("quantity", "timestamp"):
        if values[name] is None or not values[name].strip():
            raise MalformedRow(f"missing {name}")
    ts = parse_timestamp(values["timestamp"])
    if ts <= 0:
        raise MalformedRow(f"non-positive timestamp {ts}")
    return TransferRecord(
        token_address=_normalize_hex(values["token_address"], "token_address"),
        tx_hash=_normalize_hex(values["tx_hash"], "tx_hash"),
        from_addr=_normalize_hex(values["from"], "from"),
        to_addr=_normalize_hex(values["to"], "to"),
        quantity=parse_quantity(values["quantity"], quantity_mode),
        timestamp=ts,
    )


def parse_csv(path, schema: dict | None = None, quantity_mode: str = "float") -> ParseResult:
    """Parse one exported transfer CSV.

    ``schema`` maps logical field names (see ``FIELDS``) to the file's column
    names; unmapped fields use their logical name. Bad rows are skipped and
    reported in ``ParseResult.errors``; a missing column or a file without
    data rows aborts.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise EmptyFile(f"{path}: no header row")
        missing = [name for name in FIELDS if schema[name] not in header]
        if missing:
            raise MissingColumn(f"{path}: columns not found for {missing}")
        result = ParseResult(records=[])
        n_rows = 0
        for line, row in enumerate(reader, start=2):
            n_rows += 1
            try:
                result.records.append(parse_row(row, schema, quantity_mode))
            except MalformedRow as exc:
                result.errors.append(RowError(line, str(exc)))
    if n_rows == 0:
        raise EmptyFile(f"{path}: no data rows")
    if result.errors:
        log.warning("%s: skipped %d malformed rows", path, len(result.errors))
    return result


def merge_and_dedup(chunks: Iterable[Iterable[TransferRecord]]) -> list[TransferRecord]:
    """Union of chunks with one record per composite key, in dataset order.

    Apply per token: the key does not include the token address.
    """
    unique = {}
    for chunk in chunks:
        for rec in chunk:
            unique.setdefault(rec.key, rec)
    return sorted(unique.values(), key=lambda r: r.sort_key)


def cap_window(records: Sequence[TransferRecord], cap: int = DEFAULT_CAP) -> list[TransferRecord]:
    if cap < 1:
        raise ValueError("cap must be positive")
    return list(records[:cap])


def group_by_token(records: Iterable[TransferRecord]) -> dict[str, list[TransferRecord]]:
    groups = defaultdict(list)
    for rec in records:
        groups[rec.token_address].append(rec)
    return dict(groups)


def build_datasets(chunks, labels=None, cap=DEFAULT_CAP) -> dict[str, TokenDataset]:
    """Token-wise merge, dedup and cap of parsed chunks."""
    labels = labels or {}
    per_token = defaultdict(list)
    for chunk in chunks:
        for token, recs in group_by_token(chunk).items():
            per_token[token].append(recs)
    out = {}
    for token in sorted(per_token):
        records = cap_window(merge_and_dedup(per_token[token]), cap)
        out[token] = TokenDataset(token, tuple(records), labels.get(token, UNKNOWN), cap)
    return out


@dataclass
class QualityReport:
    token_address: str
    n_records: int
    missing_fields: list[int] = field(default_factory=list)
    order_violations: list[int] = field(default_factory=list)
    duplicate_keys: list[int] = field(default_factory=list)
    over_cap: bool = False
    label: str = UNKNOWN
    notes: list[str] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return (
            len(self.missing_fields)
            + len(self.order_violations)
            + len(self.duplicate_keys)
            + int(self.over_cap)
        )

    def to_dict(self):
        return {
            "token_address": self.token_address,
            "n_records": self.n_records,
            "violations": self.violations,
            "missing_fields": self.missing_fields,
            "order_violations": self.order_violations,
            "duplicate_keys": self.duplicate_keys,
            "over_cap": self.over_cap,
            "label": self.label,
            "notes": self.notes,
        }


def consistency_check(dataset: TokenDataset) -> QualityReport:
    report = QualityReport(dataset.token_address, len(dataset.records), label=dataset.label)
    seen = set()
    prev = None
    for i, rec in enumerate(dataset.records):
        if not (rec.tx_hash and rec.from_addr and rec.to_addr and rec.token_address) or rec.timestamp <= 0:
            report.missing_fields.append(i)
        if prev is not None and rec.sort_key < prev.sort_key:
            report.order_violations.append(i)
        if rec.key in seen:
            report.duplicate_keys.append(i)
        seen.add(rec.key)
        prev = rec
    report.over_cap = len(dataset.records) > dataset.cap
    if dataset.label == UNKNOWN:
        report.notes.append("label=unknown, will train as non_high_risk")
    elif dataset.label not in LABELS:
        report.notes.append(f"unrecognized label {dataset.label!r}")
    return report


def load_labels(path) -> dict[str, str]:
    labels = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            token = row["token_address"].strip().lower()
            label = row["label"].strip().lower()
            if label not in LABELS:
                raise MalformedRow(f"label file: unknown label {label!r} for {token}")
            labels[token] = label
    return labels


def load_events(path) -> dict[str, int]:
    """Rug-pull annotations: ``token_address,t_rugpull_unix``."""
    events = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            events[row["token_address"].strip().lower()] = parse_timestamp(row["t_rugpull_unix"])
    return events


def format_quantity(q) -> str:
    if isinstance(q, Decimal):
        return format(q, "f")
    return repr(float(q))


def write_records_csv(path, records: Iterable[TransferRecord]):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELDS)
        for r in records:
            writer.writerow(
                [r.token_address, r.tx_hash, r.from_addr, r.to_addr, format_quantity(r.quantity), r.timestamp]
            )


def normalized_path(out_dir, token: str) -> Path:
    return Path(out_dir) / f"{token}.normalized.csv"


def dataset_summary(datasets: dict[str, TokenDataset]) -> dict:
    counts = {token: len(ds) for token, ds in sorted(datasets.items())}
    values = list(counts.values())
    return {
        "n_tokens": len(values),
        "total_records": sum(values),
        "cap": next(iter(datasets.values())).cap if datasets else DEFAULT_CAP,
        "min_records": min(values) if values else None,
        "median_records": statistics.median(values) if values else None,
        "max_records": max(values) if values else None,
        "records": counts,
        "labels": {token: ds.label for token, ds in sorted(datasets.items())},
    }


def write_datasets(datasets: dict[str, TokenDataset], out_dir, extra=None) -> dict:
    """Normalized CSV per token plus ``dataset_summary.json`` (``extra`` keys merged in)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for token, ds in datasets.items():
        write_records_csv(normalized_path(out_dir, token), ds.records)
    summary = {**dataset_summary(datasets), **(extra or {})}
    (out_dir / "dataset_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def read_datasets(out_dir, quantity_mode: str = "float") -> dict[str, TokenDataset]:
    """Reload what ``write_datasets`` produced, labels included."""
    out_dir = Path(out_dir)
    summary = json.loads((out_dir / "dataset_summary.json").read_text())
    datasets = {}
    for token, label in summary["labels"].items():
        parsed = parse_csv(normalized_path(out_dir, token), quantity_mode=quantity_mode)
        datasets[token] = TokenDataset(token, tuple(parsed.records), label, summary["cap"])
    return datasets
