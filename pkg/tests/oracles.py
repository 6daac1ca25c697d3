"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

import math
import statistics
from collections import defaultdict

import networkx as nx
import numpy as np

from rugwarn.models import logreg_loss_grad


# ---- features ----


def brute_features(records, imbalance="mean"):
    n = len(records)
    q = [float(r.quantity) for r in records]
    senders, receivers = set(), set()
    for r in records:
        senders.add(r.from_addr)
        receivers.add(r.to_addr)
    part = defaultdict(int)
    inflow = defaultdict(float)
    outflow = defaultdict(float)
    for r in records:
        part[r.from_addr] += 1
        part[r.to_addr] += 1
        inflow[r.to_addr] += float(r.quantity)
        outflow[r.from_addr] += float(r.quantity)
    top = sorted(part.values(), reverse=True)[:10]
    minutes = defaultdict(int)
    for r in records:
        minutes[r.timestamp // 60] += 1
    counts = sorted(minutes.values())
    terms, weights = [], []
    for a in part:
        tot = inflow[a] + outflow[a]
        if tot > 0:
            terms.append(abs(inflow[a] - outflow[a]) / tot)
            weights.append(part[a])
    if not terms:
        nfi = 0.0
    elif imbalance == "mean":
        nfi = sum(terms) / len(terms)
    else:
        nfi = sum(t * w for t, w in zip(terms, weights)) / sum(weights)
    routes = set()
    for r in records:
        routes.add((r.from_addr, r.to_addr))
    return {
        "tx_count": n,
        "unique_from": len(senders),
        "unique_to": len(receivers),
        "from_to_ratio": len(senders) / len(receivers),
        "avg_quantity": statistics.fmean(q),
        "median_quantity": statistics.median(q),
        "std_quantity": statistics.pstdev(q),
        "top10_addr_ratio": sum(top) / (2 * n),
        "burst_ratio": max(counts) / statistics.median(counts),
        "net_flow_imbalance": nfi,
        "route_repeat_ratio": (n - len(routes)) / n,
        "active_minutes": len(minutes),
    }


# ---- patterns ----


def matched_oracle(records, window_minutes):
    w = window_minutes * 60
    hit = 0
    for r in records:
        if r.from_addr == r.to_addr:
            continue
        for s in records:
            if s.from_addr == r.to_addr and s.to_addr == r.from_addr and abs(s.timestamp - r.timestamp) <= w:
                hit += 1
                break
    return hit / len(records)


def circular_oracle(records, window_minutes, max_len):
    """Every window starting or ending at a record time, all simple cycles enumerated."""
    w = window_minutes * 60
    starts = {r.timestamp for r in records} | {r.timestamp - w for r in records}
    flagged = set()
    for s in starts:
        members = [i for i, r in enumerate(records) if s <= r.timestamp <= s + w]
        g = nx.DiGraph()
        for i in members:
            r = records[i]
            if r.from_addr != r.to_addr:
                g.add_edge(r.from_addr, r.to_addr)
        on_cycle = set()
        for cyc in nx.simple_cycles(g, length_bound=max_len):
            if len(cyc) >= 3:
                for k in range(len(cyc)):
                    on_cycle.add((cyc[k], cyc[(k + 1) % len(cyc)]))
        for i in members:
            r = records[i]
            if (r.from_addr, r.to_addr) in on_cycle:
                flagged.add(i)
    return len(flagged) / len(records)


# ---- metrics ----


def auc_pairs(y, s):
    pos = [b for a, b in zip(y, s) if a == 1]
    neg = [b for a, b in zip(y, s) if a == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def ap_sweep(y, s):
    """Average precision: each distinct score is a cut-off, predict positive when score >= cut."""
    n_pos = sum(y)
    prev_recall = 0.0
    ap = 0.0
    for cut in sorted(set(s), reverse=True):
        tp = sum(1 for a, b in zip(y, s) if b >= cut and a == 1)
        k = sum(1 for b in s if b >= cut)
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / k)
        prev_recall = recall
    return ap


# ---- models ----


def logloss(w, b, X, y, l2=0.0):
    total = 0.0
    for row, t in zip(X, y):
        z = sum(wi * xi for wi, xi in zip(w, row)) + b
        p = 1.0 / (1.0 + math.exp(-z))
        total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
    return total / len(y) + 0.5 * l2 * sum(wi * wi for wi in w)


def fd_relative_error(seed, l2=0.0, weighted=False):
    """Relative gap between the analytic LR gradient and central differences on a random instance."""
    rng = np.random.default_rng(seed)
    n, d = rng.integers(5, 40), rng.integers(1, 12)
    X = rng.normal(size=(n, d)) * rng.uniform(0.5, 3)
    y = rng.integers(0, 2, n).astype(float)
    w, b = rng.normal(size=d), float(rng.normal())
    sw = rng.uniform(0.5, 2, n) if weighted else None
    _, gw, gb = logreg_loss_grad(w, b, X, y, l2, sw)
    h = 1e-6
    num = np.zeros(d + 1)
    for j in range(d + 1):
        e = np.zeros(d + 1)
        e[j] = h
        plus = logreg_loss_grad(w + e[:d], b + e[d], X, y, l2, sw)[0]
        minus = logreg_loss_grad(w - e[:d], b - e[d], X, y, l2, sw)[0]
        num[j] = (plus - minus) / (2 * h)
    ana = np.r_[gw, gb]
    return np.linalg.norm(ana - num) / max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12)
