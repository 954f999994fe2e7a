"""Transaction file parsing, income estimation and cohort segmentation."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

from .errors import EmptyGroup, OverlappingCohorts, SchemaMismatch, ValidationError, WindowTooShort
from .model import (
    FIELDS,
    INFLOW,
    CohortSpec,
    EventSequence,
    Transaction,
    Window,
    build_sequence,
    local_date,
    validate_transaction,
)

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25
RESIDUAL_COHORT = "middle"


@dataclass
class ParseResult:
    transactions: list[Transaction]
    errors: list[ValidationError] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transactions)

    def __iter__(self) -> Iterator[Transaction]:
        return iter(self.transactions)

    def error_report(self) -> str:
        """Errors as JSONL of {row, field, message}."""
        return "".join(json.dumps(e.to_record()) + "\n" for e in self.errors)


def infer_format(path: str | os.PathLike) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    if suffix == ".csv":
        return "csv"
    raise SchemaMismatch(f"cannot infer format from {str(path)!r}; pass format='csv' or 'jsonl'")


def _check_keys(keys: Sequence[str], where: str) -> None:
    missing = [k for k in FIELDS if k not in keys]
    extra = [k for k in keys if k not in FIELDS]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing {', '.join(missing)}")
        if extra:
            parts.append(f"unexpected {', '.join(extra)}")
        raise SchemaMismatch(f"{where}: {'; '.join(parts)}")


def _iter_csv(handle: IO[str]) -> Iterator[tuple[int, dict]]:
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatch("empty csv file (no header)") from None
    _check_keys(header, "csv header")
    for values in reader:
        if not values:
            continue
        if len(values) != len(header):
            yield reader.line_num, ValidationError(
                "row", f"expected {len(header)} columns, got {len(values)}"
            )
            continue
        yield reader.line_num, dict(zip(header, values))


def _iter_jsonl(handle: IO[str]) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(handle, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield lineno, ValidationError("row", f"invalid JSON: {exc.msg}")
            continue
        if not isinstance(obj, dict):
            yield lineno, ValidationError("row", "expected a JSON object")
            continue
        _check_keys(list(obj), f"line {lineno}")
        yield lineno, obj


def parse_stream(handle: IO[str], format: str = "csv", strict: bool = True) -> ParseResult:
    if format not in ("csv", "jsonl"):
        raise SchemaMismatch(f"unknown format {format!r}; expected csv or jsonl")
    rows = _iter_csv(handle) if format == "csv" else _iter_jsonl(handle)
    result = ParseResult([])
    for lineno, raw in rows:
        try:
            if isinstance(raw, ValidationError):
                raise raw
            result.transactions.append(validate_transaction(raw))
        except ValidationError as exc:
            err = exc.with_row(lineno)
            if strict:
                raise err from None
            result.errors.append(err)
    if result.errors:
        log.warning("skipped %d invalid rows", len(result.errors))
    return result


def parse_transactions(
    path: str | os.PathLike, format: str | None = None, strict: bool = True
) -> ParseResult:
    """Parse a CSV or JSONL transaction file.

    Strict mode raises the first row error (with its line number); lenient
    mode skips bad rows and records them in ``ParseResult.errors``.
    """
    fmt = format or infer_format(path)
    with open(path, newline="", encoding="utf-8") as handle:
        return parse_stream(handle, fmt, strict=strict)


def write_transactions(transactions: Iterable[Transaction], handle: IO[str], format: str = "csv") -> None:
    if format == "csv":
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(FIELDS)
        for t in transactions:
            row = t.to_row()
            writer.writerow([row[k] for k in FIELDS])
    elif format == "jsonl":
        for t in transactions:
            handle.write(json.dumps(t.to_row(), separators=(",", ":")) + "\n")
    else:
        raise SchemaMismatch(f"unknown format {format!r}; expected csv or jsonl")


def dumps_transactions(transactions: Iterable[Transaction], format: str = "csv") -> str:
    buf = io.StringIO()
    write_transactions(transactions, buf, format)
    return buf.getvalue()


def estimate_income(transactions: Iterable[Transaction], window: Window | float) -> float:
    """Annualized inflow: inflow total in the window times 365.25 / window days.

    `window` may also be a plain (possibly fractional) number of days, in
    which case every inflow is counted.
    """
    if isinstance(window, Window):
        days = float(window.days)
        keep = lambda t: window.contains(local_date(t.timestamp))  # noqa: E731
    else:
        days = float(window)
        keep = lambda t: True  # noqa: E731
    if not days >= 1:
        raise WindowTooShort(f"income window must span at least 1 day, got {days}")
    total = sum((t.amount for t in transactions if t.direction == INFLOW and keep(t)), Decimal(0))
    return float(total) * (DAYS_PER_YEAR / days)


@dataclass(frozen=True)
class Dataset:
    sequences: Mapping[str, EventSequence]
    incomes: Mapping[str, float]
    window: Window
    tz: str = "UTC"

    def __post_init__(self):
        for acct, income in self.incomes.items():
            if acct not in self.sequences:
                raise ValueError(f"income for unknown account {acct!r}")
            if income < 0:
                raise ValueError(f"negative income for {acct!r}")

    @property
    def accounts(self) -> list[str]:
        return sorted(self.sequences)

    def __len__(self) -> int:
        return len(self.sequences)

    def subset(self, accounts: Iterable[str]) -> "Dataset":
        keep = sorted(set(accounts))
        return Dataset(
            {a: self.sequences[a] for a in keep},
            {a: self.incomes[a] for a in keep if a in self.incomes},
            self.window,
            self.tz,
        )

    @classmethod
    def from_transactions(
        cls,
        transactions: Iterable[Transaction],
        window: Window | None = None,
        *,
        tz: str = "UTC",
        exclude_mcc: Iterable[str] = (),
        dedup_same_day: bool = False,
    ) -> "Dataset":
        by_account: dict[str, list[Transaction]] = defaultdict(list)
        for t in transactions:
            by_account[t.account_id].append(t)
        if window is None:
            dates = [local_date(t.timestamp, tz) for ts in by_account.values() for t in ts]
            if not dates:
                raise EmptyGroup("no transactions to infer a window from")
            window = Window(min(dates), max(dates))
        exclude = tuple(exclude_mcc)
        sequences = {}
        incomes = {}
        for acct in sorted(by_account):
            txs = by_account[acct]
            sequences[acct] = build_sequence(
                txs, window, account_id=acct, tz=tz, exclude_mcc=exclude, dedup_same_day=dedup_same_day
            )
            incomes[acct] = estimate_income(txs, window)
        return cls(sequences, incomes, window, tz)


def load_dataset(
    path: str | os.PathLike,
    window: Window | None = None,
    *,
    format: str | None = None,
    strict: bool = True,
    tz: str = "UTC",
    exclude_mcc: Iterable[str] = (),
    dedup_same_day: bool = False,
) -> tuple[Dataset, ParseResult]:
    parsed = parse_transactions(path, format=format, strict=strict)
    ds = Dataset.from_transactions(
        parsed.transactions, window, tz=tz, exclude_mcc=exclude_mcc, dedup_same_day=dedup_same_day
    )
    return ds, parsed


def _bands_overlap(a: CohortSpec, b: CohortSpec) -> bool:
    inf = float("inf")
    a_lo = -inf if a.annual_inflow_min is None else a.annual_inflow_min
    a_hi = inf if a.annual_inflow_max is None else a.annual_inflow_max
    b_lo = -inf if b.annual_inflow_min is None else b.annual_inflow_min
    b_hi = inf if b.annual_inflow_max is None else b.annual_inflow_max
    if a_hi < b_lo or b_hi < a_lo:
        return False
    if a_hi == b_lo:
        return a.max_inclusive and b.min_inclusive and a_hi != inf
    if b_hi == a_lo:
        return b.max_inclusive and a.min_inclusive and b_hi != inf
    return True


def segment_cohorts(
    dataset: Dataset, specs: Sequence[CohortSpec], residual: str = RESIDUAL_COHORT
) -> dict[str, set[str]]:
    """Partition accounts into the named income bands plus a residual cohort."""
    for i, a in enumerate(specs):
        if a.name == residual:
            raise OverlappingCohorts(f"cohort name {residual!r} is reserved for the residual")
        for b in specs[i + 1:]:
            if a.name == b.name or _bands_overlap(a, b):
                raise OverlappingCohorts(f"cohorts {a.name!r} and {b.name!r} overlap")
    out: dict[str, set[str]] = {s.name: set() for s in specs}
    out[residual] = set()
    for acct in dataset.accounts:
        income = dataset.incomes.get(acct, 0.0)
        for s in specs:
            if s.contains(income):
                out[s.name].add(acct)
                break
        else:
            out[residual].add(acct)
    return out
