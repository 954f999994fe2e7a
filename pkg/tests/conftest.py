import zlib
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from shopentropy.model import EventSequence, Visit, Window

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

START = date(2010, 3, 1)


def make_seq(symbols, days=None, account_id="acct", mccs=None, window_days=28, start=START):
    """Sequence of merchant ids; `days` gives each event's day offset (default: one per day)."""
    if days is None:
        days = list(range(len(symbols)))
    window = Window(start, start + timedelta(days=max(window_days, (max(days) + 1) if days else 1) - 1))
    events = []
    per_day: dict[int, int] = {}
    for k, (sym, d) in enumerate(zip(symbols, days)):
        slot = per_day.get(d, 0)
        per_day[d] = slot + 1
        ts = datetime(start.year, start.month, start.day, 8, tzinfo=timezone.utc) + timedelta(days=d, minutes=slot)
        mcc = mccs[k] if mccs is not None else mcc_of(sym)
        events.append(Visit(ts, str(sym), mcc))
    events.sort(key=lambda e: e.timestamp)
    return EventSequence(account_id, tuple(events), window)


def mcc_of(symbol) -> str:
    return f"{zlib.crc32(str(symbol).encode()) % 9000 + 1000:04d}"


@pytest.fixture
def fixture_csv():
    return Path(__file__).parent / "data" / "transactions.csv"


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
