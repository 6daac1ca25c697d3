"""Self / Matched / Circular wash-trading pattern scores.

Each score is a record-level fraction: flagged records / tx_count.

Windows for the circular pattern are closed intervals ``[s, s + window]``.
Only windows anchored at a record timestamp need checking: any other window
holds a subset of the records of the anchored window starting at its first
record, and removing edges never creates a cycle.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import asdict, dataclass

from .errors import EmptyInput

DEFAULT_WINDOW_MINUTES = 60
DEFAULT_MAX_CYCLE_LEN = 5


@dataclass(frozen=True)
class PatternScores:
    self_score: float
    matched_score: float
    circular_score: float
    window_minutes: int = DEFAULT_WINDOW_MINUTES
    max_cycle_len: int = DEFAULT_MAX_CYCLE_LEN

    def to_dict(self):
        return asdict(self)


def _require(records):
    if len(records) == 0:
        raise EmptyInput("pattern scores need at least one record")


def _check_window(window_minutes):
    if window_minutes <= 0:
        raise ValueError("window_minutes must be positive")


def self_indices(records) -> set[int]:
    return {i for i, r in enumerate(records) if r.from_addr == r.to_addr}


def self_score(records) -> float:
    _require(records)
    return len(self_indices(records)) / len(records)


def matched_indices(records, window_minutes=DEFAULT_WINDOW_MINUTES) -> set[int]:
    """Records A->B with some B->A (A != B) no more than ``window_minutes`` apart."""
    _check_window(window_minutes)
    width = window_minutes * 60
    times = defaultdict(list)
    for r in records:
        if r.from_addr != r.to_addr:
            times[(r.from_addr, r.to_addr)].append(r.timestamp)
    for ts in times.values():
        ts.sort()
    out = set()
    for i, r in enumerate(records):
        if r.from_addr == r.to_addr:
            continue
        back = times.get((r.to_addr, r.from_addr))
        if back and bisect_left(back, r.timestamp - width) < bisect_right(back, r.timestamp + width):
            out.add(i)
    return out


def matched_score(records, window_minutes=DEFAULT_WINDOW_MINUTES) -> float:
    _require(records)
    return len(matched_indices(records, window_minutes)) / len(records)


def _prune_acyclic(succ, pred):
    """Drop nodes that cannot sit on any cycle (no in- or no out-edges), repeatedly."""
    succ = {u: set(vs) for u, vs in succ.items()}
    pred = {v: set(us) for v, us in pred.items()}
    nodes = set(succ) | set(pred)
    stack = [n for n in nodes if not succ.get(n) or not pred.get(n)]
    removed = set()
    while stack:
        n = stack.pop()
        if n in removed:
            continue
        removed.add(n)
        for v in succ.pop(n, ()):
            pred[v].discard(n)
            if not pred[v] and v not in removed:
                stack.append(v)
        for u in pred.pop(n, ()):
            succ[u].discard(n)
            if not succ[u] and u not in removed:
                stack.append(u)
    return succ


def _on_bounded_cycle(succ, u, v, max_len):
    """True if edge u->v closes a simple cycle of 3..max_len edges."""
    # need a simple path v -> ... -> u with between 2 and max_len - 1 edges
    limit = max_len - 1
    visited = {u, v}
    stack = [(v, iter(succ.get(v, ())), 0)]
    while stack:
        node, it, depth = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            stack.pop()
            visited.discard(node)
            continue
        if nxt == u:
            if depth + 1 >= 2:
                return True
            continue
        if nxt in visited or depth + 2 > limit:
            # reaching u from nxt takes at least one more edge
            continue
        visited.add(nxt)
        stack.append((nxt, iter(succ.get(nxt, ())), depth + 1))
    return False


def cyclic_edges(edges, max_len=DEFAULT_MAX_CYCLE_LEN) -> set[tuple[str, str]]:
    """Edges (self-loops ignored) lying on a directed simple cycle of length 3..max_len."""
    succ = defaultdict(set)
    pred = defaultdict(set)
    for a, b in edges:
        if a != b:
            succ[a].add(b)
            pred[b].add(a)
    live = _prune_acyclic(succ, pred)
    out = set()
    for u, vs in live.items():
        for v in vs:
            if _on_bounded_cycle(live, u, v, max_len):
                out.add((u, v))
    return out


def _check_cycle_len(max_cycle_len):
    if not 3 <= max_cycle_len <= 6:
        raise ValueError("max_cycle_len must be in 3..6")


def circular_indices(records, window_minutes=DEFAULT_WINDOW_MINUTES, max_cycle_len=DEFAULT_MAX_CYCLE_LEN) -> set[int]:
    _check_window(window_minutes)
    _check_cycle_len(max_cycle_len)
    width = window_minutes * 60
    order = sorted(range(len(records)), key=lambda i: records[i].timestamp)
    ts = [records[i].timestamp for i in order]
    flagged = set()
    prev_end = 0
    for start in range(len(order)):
        if start and ts[start] == ts[start - 1]:
            continue
        end = bisect_right(ts, ts[start] + width)
        if end <= prev_end:
            # same or fewer records than the previous anchored window
            continue
        prev_end = end
        members = defaultdict(list)
        for pos in range(start, end):
            i = order[pos]
            r = records[i]
            if r.from_addr != r.to_addr:
                members[(r.from_addr, r.to_addr)].append(i)
        if len(members) < 3:
            continue
        for edge in cyclic_edges(members, max_cycle_len):
            flagged.update(members[edge])
    return flagged


def circular_score(records, window_minutes=DEFAULT_WINDOW_MINUTES, max_cycle_len=DEFAULT_MAX_CYCLE_LEN) -> float:
    _require(records)
    return len(circular_indices(records, window_minutes, max_cycle_len)) / len(records)


def score_patterns(records, window_minutes=DEFAULT_WINDOW_MINUTES, max_cycle_len=DEFAULT_MAX_CYCLE_LEN) -> PatternScores:
    _require(records)
    return PatternScores(
        self_score=self_score(records),
        matched_score=matched_score(records, window_minutes),
        circular_score=circular_score(records, window_minutes, max_cycle_len),
        window_minutes=window_minutes,
        max_cycle_len=max_cycle_len,
    )


class PatternAccumulator:
    """Pattern scores of a growing, time-ordered prefix.

    Adding a record at time t can only create matches and cycles inside
    ``[t - window, t]``, so each step rescans that span alone. Flags are never
    withdrawn. The result equals the batch functions applied to the prefix.
    """

    def __init__(self, window_minutes=DEFAULT_WINDOW_MINUTES, max_cycle_len=DEFAULT_MAX_CYCLE_LEN):
        _check_window(window_minutes)
        _check_cycle_len(max_cycle_len)
        self.window_minutes = window_minutes
        self.max_cycle_len = max_cycle_len
        self.width = window_minutes * 60
        self.records = []
        self.times = []
        self.n_self = 0
        self.matched = set()
        self.cyclic = set()
        self.pair_times = defaultdict(list)

    def add(self, record):
        i = len(self.records)
        t = record.timestamp
        if self.times and t < self.times[-1]:
            raise ValueError("records must arrive in time order")
        self.records.append(record)
        self.times.append(t)
        a, b = record.from_addr, record.to_addr
        if a == b:
            self.n_self += 1
            return
        self.pair_times[(a, b)].append((t, i))
        back = self.pair_times.get((b, a))
        if back:
            lo = bisect_left(back, (t - self.width, -1))
            if lo < len(back):
                self.matched.add(i)
                self.matched.update(j for _, j in back[lo:])
        start = bisect_left(self.times, t - self.width)
        members = defaultdict(list)
        for j in range(start, i + 1):
            r = self.records[j]
            if r.from_addr != r.to_addr:
                members[(r.from_addr, r.to_addr)].append(j)
        if len(members) >= 3 and (a, b) in members:
            for edge in cyclic_edges(members, self.max_cycle_len):
                self.cyclic.update(members[edge])

    def snapshot(self) -> PatternScores:
        n = len(self.records)
        if n == 0:
            raise EmptyInput("no records accumulated")
        return PatternScores(
            self_score=self.n_self / n,
            matched_score=len(self.matched) / n,
            circular_score=len(self.cyclic) / n,
            window_minutes=self.window_minutes,
            max_cycle_len=self.max_cycle_len,
        )
