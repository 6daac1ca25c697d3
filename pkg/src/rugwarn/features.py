"""The twelve token-level behavioral features and feature-matrix assembly."""

from __future__ import annotations

import heapq
from bisect import bisect_left, insort
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .errors import EmptyInput, EmptySampleList
from .patterns import PatternScores

FEATURE_NAMES = (
    "tx_count",
    "unique_from",
    "unique_to",
    "from_to_ratio",
    "avg_quantity",
    "median_quantity",
    "std_quantity",
    "top10_addr_ratio",
    "burst_ratio",
    "net_flow_imbalance",
    "route_repeat_ratio",
    "active_minutes",
)

DEFAULT_GROUPS = {
    "trade": ("tx_count", "avg_quantity", "median_quantity", "std_quantity", "burst_ratio", "active_minutes"),
    "address": ("unique_from", "unique_to", "from_to_ratio", "top10_addr_ratio", "route_repeat_ratio"),
    "contract": ("net_flow_imbalance",),
}

PATTERN_NAMES = ("self_score", "matched_score", "circular_score")
IMBALANCE_MODES = ("mean", "weighted")


@dataclass
class RiskVector:
    tx_count: int
    unique_from: int
    unique_to: int
    from_to_ratio: float
    avg_quantity: float
    median_quantity: float
    std_quantity: float
    top10_addr_ratio: float
    burst_ratio: float
    net_flow_imbalance: float
    route_repeat_ratio: float
    active_minutes: int
    patterns: PatternScores | None = field(default=None, compare=False)

    def values(self, names=FEATURE_NAMES) -> list[float]:
        return [self._value(n) for n in names]

    def _value(self, name):
        if name in PATTERN_NAMES:
            if self.patterns is None:
                raise ValueError("vector carries no pattern scores")
            return float(getattr(self.patterns, name))
        return float(getattr(self, name))

    def as_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in FEATURE_NAMES}


def validate_groups(groups: dict) -> dict:
    names = [n for cols in groups.values() for n in cols]
    if sorted(names) != sorted(FEATURE_NAMES):
        raise ValueError("feature groups must partition the twelve features exactly")
    return {g: tuple(cols) for g, cols in groups.items()}


def feature_group(name: str, groups=DEFAULT_GROUPS) -> str:
    for g, cols in groups.items():
        if name in cols:
            return g
    raise KeyError(name)


def _imbalance(inflow, outflow, participation, mode):
    terms = []
    weights = []
    for addr, part in participation.items():
        total = inflow[addr] + outflow[addr]
        if total > 0:
            terms.append(abs(inflow[addr] - outflow[addr]) / total)
            weights.append(part)
    if not terms:
        # every participating address moved zero quantity
        return 0.0
    if mode == "mean":
        return float(np.mean(terms))
    if mode == "weighted":
        return float(np.average(terms, weights=weights))
    raise ValueError(f"unknown imbalance mode {mode!r}")


def compute_features(records, imbalance: str = "mean") -> RiskVector:
    """Feature vector for one record sequence (whole token or a window)."""
    n = len(records)
    if n == 0:
        raise EmptyInput("cannot compute features of an empty record list")
    qty = np.fromiter((float(r.quantity) for r in records), dtype=np.float64, count=n)
    senders = {r.from_addr for r in records}
    receivers = {r.to_addr for r in records}

    participation = Counter()
    inflow = defaultdict(float)
    outflow = defaultdict(float)
    for r, q in zip(records, qty):
        participation[r.from_addr] += 1
        participation[r.to_addr] += 1
        outflow[r.from_addr] += q
        inflow[r.to_addr] += q
    top10 = sum(heapq.nlargest(10, participation.values()))

    minute_counts = np.array(list(Counter(r.timestamp // 60 for r in records).values()))
    routes = {(r.from_addr, r.to_addr) for r in records}

    return RiskVector(
        tx_count=n,
        unique_from=len(senders),
        unique_to=len(receivers),
        from_to_ratio=len(senders) / len(receivers),
        avg_quantity=float(qty.mean()),
        median_quantity=float(np.median(qty)),
        std_quantity=float(qty.std()),
        top10_addr_ratio=top10 / (2 * n),
        burst_ratio=float(minute_counts.max() / np.median(minute_counts)),
        net_flow_imbalance=_imbalance(inflow, outflow, participation, imbalance),
        route_repeat_ratio=(n - len(routes)) / n,
        active_minutes=len(minute_counts),
    )


class _TopK:
    """Sum of the k largest counters when counters only ever grow by one."""

    def __init__(self, k=10):
        self.k = k
        self.members = {}
        self.total = 0

    def bump(self, key, new_count):
        members = self.members
        if key in members:
            members[key] = new_count
            self.total += 1
        elif len(members) < self.k:
            members[key] = new_count
            self.total += new_count
        else:
            low_key = min(members, key=members.__getitem__)
            if new_count > members[low_key]:
                self.total += new_count - members.pop(low_key)
                members[key] = new_count


class FeatureAccumulator:
    """Features of a growing, time-ordered prefix in O(log n) per record.

    ``snapshot()`` agrees with ``compute_features`` on the same prefix up to
    floating-point summation order.
    """

    def __init__(self, imbalance: str = "mean"):
        if imbalance not in IMBALANCE_MODES:
            raise ValueError(f"unknown imbalance mode {imbalance!r}")
        self.imbalance = imbalance
        self.n = 0
        self.senders = set()
        self.receivers = set()
        self.routes = set()
        self.sorted_qty = []
        self.mean = 0.0
        self.m2 = 0.0
        self.participation = Counter()
        self.top = _TopK(10)
        self.inflow = defaultdict(float)
        self.outflow = defaultdict(float)
        self.term = {}
        self.term_sum = 0.0
        self.weighted_sum = 0.0
        self.weight_total = 0
        self.minutes = {}
        self.sorted_minutes = []
        self.max_minute = 0

    def _retire(self, addr):
        t = self.term.pop(addr, None)
        if t is not None:
            self.term_sum -= t
            self.weighted_sum -= t * self.participation[addr]
            self.weight_total -= self.participation[addr]

    def _admit(self, addr):
        total = self.inflow[addr] + self.outflow[addr]
        if total > 0:
            t = abs(self.inflow[addr] - self.outflow[addr]) / total
            self.term[addr] = t
            self.term_sum += t
            self.weighted_sum += t * self.participation[addr]
            self.weight_total += self.participation[addr]

    def add(self, record):
        q = float(record.quantity)
        a, b = record.from_addr, record.to_addr
        self.n += 1
        self.senders.add(a)
        self.receivers.add(b)
        self.routes.add((a, b))
        insort(self.sorted_qty, q)
        delta = q - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (q - self.mean)

        for addr in {a, b}:
            self._retire(addr)
        self.outflow[a] += q
        self.inflow[b] += q
        for addr in (a, b):
            self.participation[addr] += 1
            self.top.bump(addr, self.participation[addr])
        for addr in {a, b}:
            self._admit(addr)

        minute = record.timestamp // 60
        old = self.minutes.get(minute, 0)
        if old:
            del self.sorted_minutes[bisect_left(self.sorted_minutes, old)]
        self.minutes[minute] = old + 1
        insort(self.sorted_minutes, old + 1)
        self.max_minute = max(self.max_minute, old + 1)

    @staticmethod
    def _median(sorted_values):
        m = len(sorted_values)
        mid = m // 2
        if m % 2:
            return float(sorted_values[mid])
        return (sorted_values[mid - 1] + sorted_values[mid]) / 2.0

    def snapshot(self) -> RiskVector:
        if self.n == 0:
            raise EmptyInput("no records accumulated")
        n = self.n
        if self.term:
            if self.imbalance == "mean":
                imbalance = self.term_sum / len(self.term)
            else:
                imbalance = self.weighted_sum / self.weight_total
        else:
            imbalance = 0.0
        return RiskVector(
            tx_count=n,
            unique_from=len(self.senders),
            unique_to=len(self.receivers),
            from_to_ratio=len(self.senders) / len(self.receivers),
            avg_quantity=self.mean,
            median_quantity=self._median(self.sorted_qty),
            std_quantity=sqrt(max(self.m2 / n, 0.0)),
            top10_addr_ratio=self.top.total / (2 * n),
            burst_ratio=self.max_minute / self._median(self.sorted_minutes),
            net_flow_imbalance=imbalance,
            route_repeat_ratio=(n - len(self.routes)) / n,
            active_minutes=len(self.minutes),
        )


def selected_columns(group_mask=(), groups=DEFAULT_GROUPS) -> list[str]:
    """Columns left after masking out the named groups, in ``FEATURE_NAMES`` order."""
    unknown = set(group_mask) - set(groups)
    if unknown:
        raise ValueError(f"unknown feature groups {sorted(unknown)}")
    dropped = {n for g in group_mask for n in groups[g]}
    return [n for n in FEATURE_NAMES if n not in dropped]


def feature_matrix(samples, group_mask=(), groups=DEFAULT_GROUPS, with_patterns=False):
    """Stack samples into ``(X, y, columns)``.

    ``samples`` holds ``(RiskVector, label)`` pairs, labels either binary or
    label strings (only ``high_risk`` maps to 1). ``group_mask`` names the
    feature groups to remove.
    """
    if len(samples) == 0:
        raise EmptySampleList("no samples to stack")
    columns = selected_columns(group_mask, groups)
    if with_patterns:
        columns = columns + list(PATTERN_NAMES)
    rows = [vec.values(columns) for vec, _ in samples]
    labels = [binarize(label) for _, label in samples]
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(columns)), np.array(labels, dtype=np.int64), columns


def binarize(label) -> int:
    if isinstance(label, str):
        return 1 if label == "high_risk" else 0
    return int(bool(label))
