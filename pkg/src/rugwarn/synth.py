"""Labeled synthetic transfer streams with injected wash-trading campaigns.

A token is a time-ordered stream of "steps". Each step emits either one
organic transfer, a wash-trading group (self loop, A->B->A pair, or an
A->...->A cycle), or a same-minute burst. High-risk tokens ramp their
campaign probabilities toward a terminal rug-pull transfer, which is the last
record, so the last observed timestamp equals the rug-pull time exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .ingest import FIELDS, HIGH_RISK, NON_HIGH_RISK, TokenDataset, TransferRecord

BASE_TIME = 1_700_000_000


@dataclass(frozen=True)
class ClassProfile:
    """Per-class generation knobs; intensities are per-step probabilities at full ramp."""

    self_intensity: float = 0.0
    matched_intensity: float = 0.0
    circular_intensity: float = 0.0
    cycle_lengths: tuple[int, ...] = (3, 4)
    burst_intensity: float = 0.0
    burst_multiplier: float = 8.0
    dump_intensity: float = 0.0
    dump_scale: float = 20.0
    concentration_ramp: float = 0.0
    ramp: bool = False
    ramp_floor: float = 0.3
    ramp_power: float = 1.0
    ramp_trade: bool = True
    weak_fraction: float = 0.0
    weak_scale: float = 0.25
    wash_only_fraction: float = 0.0
    wash_only_boost: float = 2.0
    rug: bool = False

    def intensities(self):
        return {
            "self_intensity": self.self_intensity,
            "matched_intensity": self.matched_intensity,
            "circular_intensity": self.circular_intensity,
            "burst_intensity": self.burst_intensity,
            "dump_intensity": self.dump_intensity,
            "concentration_ramp": self.concentration_ramp,
            "weak_fraction": self.weak_fraction,
            "wash_only_fraction": self.wash_only_fraction,
            "weak_plus_wash_only": self.weak_fraction + self.wash_only_fraction,
        }

    def scaled(self, factor):
        return replace(
            self,
            self_intensity=self.self_intensity * factor,
            matched_intensity=self.matched_intensity * factor,
            circular_intensity=self.circular_intensity * factor,
            burst_intensity=self.burst_intensity * factor,
            dump_intensity=self.dump_intensity * factor,
            concentration_ramp=self.concentration_ramp * factor,
        )

    def wash_only(self, baseline: "ClassProfile"):
        """Boosted wash campaigns over ``baseline``'s (unramped) burst and dump behavior."""
        b = self.wash_only_boost
        return replace(
            self,
            self_intensity=min(1.0, self.self_intensity * b),
            matched_intensity=min(1.0, self.matched_intensity * b),
            circular_intensity=min(1.0, self.circular_intensity * b),
            concentration_ramp=min(1.0, self.concentration_ramp * b),
            burst_intensity=baseline.burst_intensity,
            burst_multiplier=baseline.burst_multiplier,
            dump_intensity=baseline.dump_intensity,
            dump_scale=baseline.dump_scale,
            ramp_trade=False,
        )


def default_high_risk():
    # trade-side signal (bursts, dumps) dominates; a minority of tokens carry wash campaigns only
    return ClassProfile(
        self_intensity=0.003,
        matched_intensity=0.01,
        circular_intensity=0.006,
        burst_intensity=0.035,
        burst_multiplier=10.0,
        dump_intensity=0.1,
        concentration_ramp=0.05,
        ramp=True,
        weak_fraction=0.15,
        wash_only_fraction=0.15,
        wash_only_boost=4.0,
        rug=True,
    )


def default_non_high_risk():
    return ClassProfile(
        self_intensity=0.002,
        matched_intensity=0.01,
        circular_intensity=0.004,
        burst_intensity=0.008,
        burst_multiplier=6.0,
        dump_intensity=0.01,
        concentration_ramp=0.03,
    )


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 42
    n_high_risk: int = 30
    n_non_high_risk: int = 30
    records_min: int = 1000
    records_max: int = 5000
    address_pool: int = 400
    insiders: int = 8
    rate_min: float = 0.5
    rate_max: float = 2.0
    zipf_exponent: float = 1.1
    fresh_receiver_share: float = 0.9
    quantity_scale_log10: tuple[float, float] = (4.0, 4.3)
    event_fraction: float = 1.0
    duplicate_share: float = 0.01
    high_risk: ClassProfile = field(default_factory=default_high_risk)
    non_high_risk: ClassProfile = field(default_factory=default_non_high_risk)

    def validate(self):
        if self.n_high_risk < 0 or self.n_non_high_risk < 0:
            raise InvalidSpec("token counts must be non-negative")
        if not 2 <= self.records_min <= self.records_max:
            raise InvalidSpec("need 2 <= records_min <= records_max")
        if not 0 < self.event_fraction <= 1:
            raise InvalidSpec("event_fraction must be in (0, 1]")
        if not 0 < self.rate_min <= self.rate_max:
            raise InvalidSpec("need 0 < rate_min <= rate_max")
        if self.address_pool < 2 or self.insiders < 6:
            raise InvalidSpec("address_pool >= 2 and insiders >= 6 required")
        if not 0 <= self.fresh_receiver_share <= 1 or not 0 <= self.duplicate_share <= 1:
            raise InvalidSpec("shares must be in [0, 1]")
        for name, prof in (("high_risk", self.high_risk), ("non_high_risk", self.non_high_risk)):
            for key, value in prof.intensities().items():
                if not 0 <= value <= 1:
                    raise InvalidSpec(f"{name}.{key}={value} outside [0, 1]")
            if any(c < 3 for c in prof.cycle_lengths) or not prof.cycle_lengths:
                raise InvalidSpec(f"{name}.cycle_lengths must be >= 3")
            if not 0 <= prof.ramp_floor <= 1 or prof.burst_multiplier <= 0:
                raise InvalidSpec(f"{name}: bad ramp_floor or burst_multiplier")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("high_risk", "non_high_risk"):
            if key in d and isinstance(d[key], dict):
                prof = dict(d[key])
                if "cycle_lengths" in prof:
                    prof["cycle_lengths"] = tuple(prof["cycle_lengths"])
                d[key] = ClassProfile(**prof)
        if "quantity_scale_log10" in d:
            d["quantity_scale_log10"] = tuple(d["quantity_scale_log10"])
        return cls(**d)


@dataclass
class TokenTruth:
    token_address: str
    label: str
    t_rugpull: int | None
    n_records: int
    archetype: str
    injected: dict[str, list[int]]


@dataclass
class SyntheticCorpus:
    spec: ScenarioSpec
    datasets: dict[str, TokenDataset]
    truth: dict[str, TokenTruth]

    def ground_truth(self):
        return {
            "seed": self.spec.seed,
            "spec": self.spec.to_dict(),
            "tokens": {t: asdict(v) for t, v in sorted(self.truth.items())},
        }


def _hex(rng, nbytes):
    return "0x" + rng.bytes(nbytes).hex()


class _TokenBuilder:
    def __init__(self, spec: ScenarioSpec, profile: ClassProfile, rng, label, archetype):
        self.spec = spec
        self.prof = profile
        self.rng = rng
        self.label = label
        self.archetype = archetype
        self.token = _hex(rng, 20)
        self.holders = [_hex(rng, 20) for _ in range(spec.address_pool)]
        self.insiders = [_hex(rng, 20) for _ in range(spec.insiders)]
        ranks = np.arange(1, spec.address_pool + 1, dtype=np.float64)
        w = ranks ** (-spec.zipf_exponent)
        self.zipf_cdf = np.cumsum(w / w.sum())
        self.rate = math.exp(rng.uniform(math.log(spec.rate_min), math.log(spec.rate_max)))
        lo, hi = spec.quantity_scale_log10
        self.scale = 10 ** rng.uniform(lo, hi)
        self.t = BASE_TIME + int(rng.integers(0, 30 * 86400))
        self.rows = []
        self.groups = {"self": [], "matched": [], "circular": []}

    def _emit(self, a, b, qty, gap):
        self.t += max(1, int(gap))
        self.rows.append((a, b, float(qty), self.t))
        return len(self.rows) - 1

    def _organic_gap(self):
        return self.rng.exponential(60.0 / self.rate)

    def _qty(self, mu=0.0, sigma=1.0):
        return round(self.scale * self.rng.lognormal(mu, sigma), 6)

    def _sender(self, ramp):
        if self.rng.random() < self.prof.concentration_ramp * ramp:
            return self.insiders[int(self.rng.integers(len(self.insiders)))]
        k = int(np.searchsorted(self.zipf_cdf, self.rng.random(), side="right"))
        return self.holders[min(k, len(self.holders) - 1)]

    def _receiver(self, sender):
        while True:
            if self.rng.random() < self.spec.fresh_receiver_share:
                return _hex(self.rng, 20)
            b = self.holders[int(self.rng.integers(len(self.holders)))]
            if b != sender:
                return b

    def organic(self, ramp, trade_ramp):
        a = self._sender(ramp)
        b = self._receiver(a)
        if self.rng.random() < self.prof.dump_intensity * trade_ramp:
            qty = self._qty(math.log(self.prof.dump_scale), 1.0)
        else:
            qty = self._qty()
        self._emit(a, b, qty, self._organic_gap())

    def wash(self, kind):
        rng = self.rng
        # same amount cycled through the group, drawn like an organic transfer
        qty = self._qty()
        gap0 = self._organic_gap()
        if kind == "self":
            a = self.insiders[int(rng.integers(len(self.insiders)))]
            self.groups["self"].append([self._emit(a, a, qty, gap0)])
        elif kind == "matched":
            a, b = (self.insiders[k] for k in rng.choice(len(self.insiders), size=2, replace=False))
            i = self._emit(a, b, qty, gap0)
            j = self._emit(b, a, qty * rng.uniform(0.98, 1.0), rng.integers(5, 300))
            self.groups["matched"].append([i, j])
        else:
            length = int(rng.choice(self.prof.cycle_lengths))
            ring = [self.insiders[k] for k in rng.choice(len(self.insiders), size=length, replace=False)]
            idx = [self._emit(ring[0], ring[1], qty, gap0)]
            for k in range(1, length):
                idx.append(self._emit(ring[k], ring[(k + 1) % length], qty, rng.integers(5, 300)))
            self.groups["circular"].append(idx)

    def burst(self):
        size = int(math.ceil(self.prof.burst_multiplier * max(1.0, self.rate)))
        size = min(size, 50)
        hub = self.holders[0]
        self.t += int(self._organic_gap()) + 1
        # first burst record lands on the next minute boundary, so the burst fills one bucket
        self.t = (self.t // 60 + 1) * 60 - 1
        for _ in range(size):
            # many distinct sellers, so bursts do not masquerade as route reuse
            a = self.holders[int(self.rng.integers(len(self.holders)))]
            self._emit(a, hub if a != hub else self._receiver(a), self._qty(0.3, 1.0), 1)

    def group_size(self, kind):
        if kind == "self":
            return 1
        if kind == "matched":
            return 2
        if kind == "circular":
            return max(self.prof.cycle_lengths)
        return min(50, int(math.ceil(self.prof.burst_multiplier * max(1.0, self.rate))))

    def build(self, n_target):
        prof = self.prof
        n_body = n_target - 1 if prof.rug else n_target
        kinds = ("self", "matched", "circular", "burst")
        while len(self.rows) < n_body:
            progress = len(self.rows) / max(1, n_body)
            if prof.ramp:
                ramp = prof.ramp_floor + (1 - prof.ramp_floor) * progress**prof.ramp_power
            else:
                ramp = 1.0
            trade_ramp = ramp if prof.ramp_trade else 1.0
            probs = np.array([prof.self_intensity * ramp, prof.matched_intensity * ramp,
                              prof.circular_intensity * ramp, prof.burst_intensity * trade_ramp])
            u = self.rng.random()
            cum = np.cumsum(probs)
            pick = int(np.searchsorted(cum, u, side="right"))
            if pick < 4 and n_body - len(self.rows) >= self.group_size(kinds[pick]):
                if kinds[pick] == "burst":
                    self.burst()
                else:
                    self.wash(kinds[pick])
            else:
                self.organic(ramp, trade_ramp)
        if prof.rug:
            dev = self.insiders[0]
            self._emit(dev, self.holders[0], self._qty(math.log(prof.dump_scale) + 3.0, 0.2), self._organic_gap())

    def dataset(self):
        records = [
            TransferRecord(self.token, _hex(self.rng, 32), a, b, q, t) for a, b, q, t in self.rows
        ]
        order = sorted(range(len(records)), key=lambda i: records[i].sort_key)
        position = {old: new for new, old in enumerate(order)}
        injected = {
            kind: sorted(position[i] for grp in groups for i in grp)
            for kind, groups in self.groups.items()
        }
        ds = TokenDataset(self.token, tuple(records[i] for i in order), self.label, cap=max(len(records), 1))
        t_rug = ds.records[-1].timestamp if self.prof.rug else None
        truth = TokenTruth(self.token, self.label, t_rug, len(records), self.archetype, injected)
        return ds, truth


def generate(spec: ScenarioSpec = ScenarioSpec()) -> SyntheticCorpus:
    """Deterministic corpus for ``spec``; each token uses its own seed-derived stream."""
    spec.validate()
    plan = [(HIGH_RISK, spec.high_risk)] * spec.n_high_risk + [(NON_HIGH_RISK, spec.non_high_risk)] * spec.n_non_high_risk
    children = np.random.SeedSequence(spec.seed).spawn(len(plan))
    datasets, truth = {}, {}
    for (label, profile), child in zip(plan, children):
        rng = np.random.Generator(np.random.PCG64(child))
        u = rng.random()
        if u < profile.weak_fraction:
            archetype, prof = "weak", profile.scaled(profile.weak_scale)
        elif u < profile.weak_fraction + profile.wash_only_fraction:
            other = spec.non_high_risk if label == HIGH_RISK else spec.high_risk
            archetype, prof = "wash_only", profile.wash_only(other)
        else:
            archetype, prof = "full", profile
        n_total = int(rng.integers(spec.records_min, spec.records_max + 1))
        n_target = max(2, int(math.ceil(spec.event_fraction * n_total))) if prof.rug else n_total
        builder = _TokenBuilder(spec, prof, rng, label, archetype)
        builder.build(n_target)
        ds, tt = builder.dataset()
        datasets[ds.token_address] = ds
        truth[ds.token_address] = tt
    return SyntheticCorpus(spec, datasets, truth)


def write_corpus(corpus: SyntheticCorpus, out_dir, chunks: int = 2):
    """Raw per-token CSV chunks (ingest input format), labels.csv, events.csv and ground_truth.json.

    Chunks overlap by ``duplicate_share`` of the records so ingest has real
    duplicates to remove.
    """
    out_dir = Path(out_dir)
    raw = out_dir / "raw"
    raw.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([corpus.spec.seed, 1])))
    for token, ds in sorted(corpus.datasets.items()):
        recs = list(ds.records)
        bounds = np.linspace(0, len(recs), chunks + 1).astype(int)
        for c in range(chunks):
            part = recs[bounds[c] : bounds[c + 1]]
            n_dup = int(round(corpus.spec.duplicate_share * len(part)))
            if c > 0 and n_dup:
                prev = recs[bounds[c - 1] : bounds[c]]
                picks = rng.choice(len(prev), size=min(n_dup, len(prev)), replace=False)
                part = part + [prev[i] for i in sorted(picks)]
            with (raw / f"{token}.part{c}.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(FIELDS)
                for r in part:
                    w.writerow([r.token_address, r.tx_hash, r.from_addr, r.to_addr, repr(r.quantity), r.timestamp])
    with (out_dir / "labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token_address", "label"])
        for token, tt in sorted(corpus.truth.items()):
            w.writerow([token, tt.label])
    with (out_dir / "events.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token_address", "t_rugpull_unix"])
        for token, tt in sorted(corpus.truth.items()):
            if tt.t_rugpull is not None:
                w.writerow([token, tt.t_rugpull])
    (out_dir / "ground_truth.json").write_text(json.dumps(corpus.ground_truth(), indent=1, sort_keys=True) + "\n")
    return raw
