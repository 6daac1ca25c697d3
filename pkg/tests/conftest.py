import hashlib
import os
import random

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from rugwarn.ingest import TransferRecord

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TOKEN = "0x" + "ab" * 20


def rec(frm, to, qty=1.0, ts=1_700_000_000, tx=None, token=TOKEN):
    tx = tx or "0x" + hashlib.sha1(repr((frm, to, qty, ts)).encode()).hexdigest()[:12]
    return TransferRecord(token, tx, frm, to, qty, ts)


def random_fixture(seed, n=500):
    """Heavy-tailed senders, bursty gaps, lognormal quantities."""
    rng = random.Random(seed)
    addrs = [f"0x{i:040x}" for i in range(60)]
    out = []
    t = 1_700_000_000
    for i in range(n):
        t += rng.choice([0, 0, 1, 5, 30, 90, 400])
        a = addrs[min(int(rng.paretovariate(1.2)) - 1, 59)]
        b = addrs[rng.randrange(60)]
        out.append(TransferRecord("0xt", f"0x{i:x}", a, b, round(rng.lognormvariate(8, 2), 6), t))
    return out


ADDRS = [f"0x{i:040x}" for i in range(1, 9)]


@st.composite
def records(draw, min_size=1, max_size=40, addrs=ADDRS, span=7200):
    n = draw(st.integers(min_size, max_size))
    base = 1_700_000_000
    out = []
    for i in range(n):
        a = draw(st.sampled_from(addrs))
        b = draw(st.sampled_from(addrs))
        q = draw(st.floats(0.5, 1e6, allow_nan=False, allow_infinity=False))
        t = base + draw(st.integers(0, span))
        tx = f"0x{draw(st.integers(0, 50)):04x}"
        out.append(TransferRecord(TOKEN, tx, a, b, q, t))
    return sorted(out, key=lambda r: r.sort_key)


# acceptance bookkeeping: one summary line per criterion
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _CRITERIA.get(n, (title, True))
        _CRITERIA[n] = (title, prev[1] and report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
