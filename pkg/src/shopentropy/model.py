"""Domain types shared across the toolkit and the transaction validator.

All types are frozen; build them once per account and share read-only.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal
from functools import lru_cache
from typing import Iterable, Mapping, NamedTuple
from zoneinfo import ZoneInfo

from .errors import (
    AmountMalformed,
    DirectionUnknown,
    MccMalformed,
    MissingField,
    MixedAccounts,
    TimestampMalformed,
)

FIELDS = ("account_id", "timestamp", "merchant_id", "mcc", "amount", "direction")
INFLOW = "inflow"
OUTFLOW = "outflow"
DIRECTIONS = (INFLOW, OUTFLOW)

# Second resolution, or exactly six fractional digits, so that every accepted
# value formats back to the identical string.
_TS_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{6}))?Z$")
_AMOUNT_RE = re.compile(r"^(?:0|[1-9]\d*)(?:\.\d+)?$")
_MCC_RE = re.compile(r"^\d{4}$")


@lru_cache(maxsize=None)
def get_tz(name: str) -> timezone | ZoneInfo:
    if name.upper() == "UTC":
        return timezone.utc
    return ZoneInfo(name)


def local_date(ts: datetime, tz: str = "UTC") -> date:
    """Calendar date of `ts` in the named timezone."""
    if tz.upper() == "UTC":
        return ts.date()
    return ts.astimezone(get_tz(tz)).date()


def parse_timestamp(text: str) -> datetime:
    m = _TS_RE.match(text)
    if m is None:
        raise TimestampMalformed("timestamp", f"not an ISO-8601 UTC timestamp: {text!r}")
    y, mo, d, h, mi, s, frac = m.groups()
    try:
        return datetime(
            int(y), int(mo), int(d), int(h), int(mi), int(s),
            int(frac) if frac else 0, tzinfo=timezone.utc,
        )
    except ValueError as exc:
        raise TimestampMalformed("timestamp", f"impossible date/time {text!r}: {exc}") from None


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Window:
    """Inclusive calendar-date range."""

    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"window end {self.end} precedes start {self.start}")

    @property
    def days(self) -> int:
        return (self.end - self.start).days + 1

    def contains(self, d: date) -> bool:
        return self.start <= d <= self.end

    def dates(self) -> list[date]:
        return [self.start + timedelta(days=k) for k in range(self.days)]

    @classmethod
    def parse(cls, start: str, end: str) -> "Window":
        return cls(date.fromisoformat(start), date.fromisoformat(end))

    def to_dict(self) -> dict:
        return {"start": self.start.isoformat(), "end": self.end.isoformat()}


@dataclass(frozen=True)
class Transaction:
    account_id: str
    timestamp: datetime
    merchant_id: str
    mcc: str
    amount: Decimal
    direction: str

    def __post_init__(self):
        if not _MCC_RE.match(self.mcc):
            raise MccMalformed("mcc", f"expected 4 digits, got {self.mcc!r}")
        if self.direction not in DIRECTIONS:
            raise DirectionUnknown("direction", f"unknown direction {self.direction!r}")
        if not self.amount > 0:
            raise AmountMalformed("amount", "amount must be positive; sign is carried by direction")
        if self.timestamp.tzinfo is None:
            raise TimestampMalformed("timestamp", "timestamp must be timezone-aware")

    def to_row(self) -> dict[str, str]:
        return {
            "account_id": self.account_id,
            "timestamp": format_timestamp(self.timestamp),
            "merchant_id": self.merchant_id,
            "mcc": self.mcc,
            "amount": str(self.amount),
            "direction": self.direction,
        }


def _normalize_mcc(raw) -> str:
    if isinstance(raw, bool):
        raise MccMalformed("mcc", f"expected 4 digits, got {raw!r}")
    if isinstance(raw, int):
        # Numeric codes (JSONL) lose their leading zeros.
        if 0 <= raw <= 9999:
            return f"{raw:04d}"
        raise MccMalformed("mcc", f"code out of range: {raw!r}")
    text = str(raw).strip()
    if not _MCC_RE.match(text):
        raise MccMalformed("mcc", f"expected exactly 4 decimal digits, got {text!r}")
    return text


def validate_transaction(raw: Mapping[str, object]) -> Transaction:
    """Validate one raw field map and build a :class:`Transaction`.

    Raises a :class:`ValidationError` subclass naming the offending field.
    """
    for name in FIELDS:
        if name not in raw or raw[name] is None:
            raise MissingField(name, "missing field")
    account_id = str(raw["account_id"])
    merchant_id = str(raw["merchant_id"])
    if not account_id:
        raise MissingField("account_id", "empty account_id")
    if not merchant_id:
        raise MissingField("merchant_id", "empty merchant_id")
    ts = parse_timestamp(str(raw["timestamp"]))
    mcc = _normalize_mcc(raw["mcc"])
    amount_text = str(raw["amount"]).strip()
    if not _AMOUNT_RE.match(amount_text):
        raise AmountMalformed("amount", f"not a positive decimal amount: {amount_text!r}")
    amount = Decimal(amount_text)
    if amount <= 0:
        raise AmountMalformed("amount", "amount must be positive; sign is carried by direction")
    direction = str(raw["direction"]).strip().lower()
    if direction not in DIRECTIONS:
        raise DirectionUnknown("direction", f"expected inflow or outflow, got {raw['direction']!r}")
    return Transaction(account_id, ts, merchant_id, mcc, amount, direction)


class Visit(NamedTuple):
    timestamp: datetime
    merchant_id: str
    mcc: str


@dataclass(frozen=True)
class VisitDistribution:
    counts: Mapping[str, int]
    total: int

    def __post_init__(self):
        if self.total != sum(self.counts.values()):
            raise ValueError("total must equal the sum of counts")
        if any(c < 1 for c in self.counts.values()):
            raise ValueError("every count must be >= 1")

    @classmethod
    def from_symbols(cls, symbols: Iterable[str]) -> "VisitDistribution":
        counts = Counter(symbols)
        return cls(dict(sorted(counts.items())), sum(counts.values()))

    def probabilities(self) -> dict[str, float]:
        return {k: c / self.total for k, c in self.counts.items()}


@dataclass(frozen=True)
class EventSequence:
    """Time-ordered merchant visits of a single account inside a window."""

    account_id: str
    events: tuple[Visit, ...]
    window: Window
    tz: str = "UTC"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(Visit(*e) for e in self.events))
        prev = None
        for ev in self.events:
            if prev is not None and ev.timestamp < prev:
                raise ValueError("events must be sorted by timestamp")
            if not self.window.contains(local_date(ev.timestamp, self.tz)):
                raise ValueError(f"event at {ev.timestamp} outside window {self.window}")
            prev = ev.timestamp

    def __len__(self) -> int:
        return len(self.events)

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def n_merchants(self) -> int:
        return len({e.merchant_id for e in self.events})

    def symbols(self, level: str = "merchant") -> list[str]:
        if level == "merchant":
            return [e.merchant_id for e in self.events]
        if level == "mcc":
            return [e.mcc for e in self.events]
        raise ValueError(f"unknown level {level!r}; expected 'merchant' or 'mcc'")

    def visit_distribution(self, level: str = "merchant") -> VisitDistribution:
        return VisitDistribution.from_symbols(self.symbols(level))

    def days(self) -> list[date]:
        return [local_date(e.timestamp, self.tz) for e in self.events]

    def with_events(self, events: Iterable[Visit]) -> "EventSequence":
        return EventSequence(self.account_id, tuple(events), self.window, self.tz)


@dataclass(frozen=True)
class EntropyReport:
    account_id: str
    s_rand: float
    s_unc: float
    s_true: float
    n_events: int
    n_merchants: int

    def __post_init__(self):
        if self.s_unc < 0 or self.s_unc > self.s_rand + 1e-12:
            raise ValueError("EntropyReport requires 0 <= s_unc <= s_rand")
        if self.s_rand != math.log2(self.n_merchants):
            raise ValueError("s_rand must equal log2(n_merchants)")

    def to_dict(self) -> dict:
        return {
            "account_id": self.account_id,
            "s_rand": self.s_rand,
            "s_unc": self.s_unc,
            "s_true": self.s_true,
            "n_events": self.n_events,
            "n_merchants": self.n_merchants,
        }


@dataclass(frozen=True)
class CohortSpec:
    """Income band; bounds are annualized inflow in currency/year.

    ``None`` means unbounded. Inclusivity flags pin the strict vs non-strict
    comparisons at each end.
    """

    name: str
    annual_inflow_min: float | None = None
    annual_inflow_max: float | None = None
    min_inclusive: bool = True
    max_inclusive: bool = False

    def __post_init__(self):
        lo, hi = self.annual_inflow_min, self.annual_inflow_max
        if lo is not None and hi is not None and not lo < hi:
            raise ValueError(f"cohort {self.name!r}: min {lo} must be below max {hi}")

    def contains(self, income: float) -> bool:
        lo, hi = self.annual_inflow_min, self.annual_inflow_max
        if lo is not None and (income < lo or (income == lo and not self.min_inclusive)):
            return False
        if hi is not None and (income > hi or (income == hi and not self.max_inclusive)):
            return False
        return True


POOR = CohortSpec("poor", 0.0, 16_000.0, min_inclusive=True, max_inclusive=False)
WEALTHY = CohortSpec("wealthy", 80_000.0, None, min_inclusive=False)
INCOME_COHORTS = (POOR, WEALTHY)


def build_sequence(
    transactions: Iterable[Transaction] | EventSequence,
    window: Window,
    *,
    account_id: str | None = None,
    tz: str = "UTC",
    exclude_mcc: Iterable[str] = (),
    dedup_same_day: bool = False,
) -> EventSequence:
    """Assemble the visit sequence of one account.

    Only outflow transactions become visits; events whose local date falls
    outside `window` are dropped. Sorting is stable, so same-timestamp events
    keep their input order. An existing :class:`EventSequence` may be passed
    in place of transactions (re-windowing it).
    """
    excluded = frozenset(exclude_mcc)
    if isinstance(transactions, EventSequence):
        account_id = transactions.account_id
        tz = transactions.tz
        visits = list(transactions.events)
    else:
        visits = []
        for t in transactions:
            if account_id is None:
                account_id = t.account_id
            elif t.account_id != account_id:
                raise MixedAccounts(f"mixed account ids: {account_id!r} and {t.account_id!r}")
            if t.direction == OUTFLOW:
                visits.append(Visit(t.timestamp, t.merchant_id, t.mcc))
    visits = [
        v for v in visits
        if v.mcc not in excluded and window.contains(local_date(v.timestamp, tz))
    ]
    visits.sort(key=lambda v: v.timestamp)
    if dedup_same_day:
        seen = set()
        kept = []
        for v in visits:
            key = (local_date(v.timestamp, tz), v.merchant_id)
            if key not in seen:
                seen.add(key)
                kept.append(v)
        visits = kept
    return EventSequence(account_id if account_id is not None else "", tuple(visits), window, tz)
