import io
import json
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from shopentropy.errors import MccMalformed, OverlappingCohorts, SchemaMismatch, WindowTooShort
from shopentropy.ingest import (
    Dataset,
    dumps_transactions,
    estimate_income,
    load_dataset,
    parse_stream,
    parse_transactions,
    segment_cohorts,
)
from shopentropy.model import INCOME_COHORTS, POOR, WEALTHY, CohortSpec, Transaction, Window

HEADER = "account_id,timestamp,merchant_id,mcc,amount,direction\n"


def rows_csv(n, bad_mcc_at=None):
    lines = [HEADER]
    for k in range(n):
        mcc = "541" if k == bad_mcc_at else "5411"
        lines.append(f"a1,2010-03-0{k + 1}T09:00:00Z,m{k},{mcc},1.00,outflow\n")
    return "".join(lines)


def inflow(amount, day=1, account="a"):
    return Transaction(account, datetime(2010, 1, day, tzinfo=timezone.utc), "PAY", "4829", Decimal(amount), "inflow")


def test_five_row_csv():
    assert len(parse_stream(io.StringIO(rows_csv(5)))) == 5


def test_lenient_records_bad_row():
    res = parse_stream(io.StringIO(rows_csv(5, bad_mcc_at=2)), strict=False)
    assert len(res.transactions) == 4
    assert len(res.errors) == 1
    rec = json.loads(res.error_report())
    assert rec == {"row": 4, "field": "mcc", "message": rec["message"]}


def test_strict_aborts_with_row_number():
    with pytest.raises(MccMalformed) as exc:
        parse_stream(io.StringIO(rows_csv(5, bad_mcc_at=2)), strict=True)
    assert exc.value.row == 4


def test_missing_column():
    text = "account_id,timestamp,merchant_id,amount,direction\na1,2010-03-01T09:00:00Z,m,1.00,outflow\n"
    with pytest.raises(SchemaMismatch, match="mcc"):
        parse_stream(io.StringIO(text))


def test_jsonl_and_csv_agree(fixture_csv, tmp_path):
    csv_txs = parse_transactions(fixture_csv).transactions
    path = tmp_path / "tx.jsonl"
    path.write_text(dumps_transactions(csv_txs, "jsonl"))
    assert parse_transactions(path).transactions == csv_txs


def test_jsonl_numeric_mcc():
    line = json.dumps({"account_id": "a", "timestamp": "2010-03-01T09:00:00Z", "merchant_id": "m",
                       "mcc": 742, "amount": "3.00", "direction": "outflow"})
    assert parse_stream(io.StringIO(line + "\n"), "jsonl").transactions[0].mcc == "0742"


def test_fixture_round_trip_is_byte_identical(fixture_csv):
    text = fixture_csv.read_text()
    assert dumps_transactions(parse_transactions(fixture_csv).transactions) == text


_names = st.text(st.characters(codec="utf-8", exclude_categories=("Cs", "Cc")), min_size=1, max_size=8)


@given(st.lists(st.tuples(_names, st.integers(0, 10**9), st.integers(0, 999_999), _names,
                          st.integers(0, 9999), st.decimals(min_value=Decimal("0.01"), max_value=Decimal(10**6),
                                                            places=2), st.booleans()), max_size=15))
def test_serialize_parse_round_trip(rows):
    base = datetime(2000, 1, 1, tzinfo=timezone.utc)
    txs = [Transaction(a, base + timedelta(seconds=s, microseconds=us), m, f"{mcc:04d}", amt,
                       "inflow" if inflow_ else "outflow")
           for a, s, us, m, mcc, amt, inflow_ in rows]
    for fmt in ("csv", "jsonl"):
        text = dumps_transactions(txs, fmt)
        parsed = parse_stream(io.StringIO(text, newline=""), fmt).transactions
        assert parsed == txs
        assert dumps_transactions(parsed, fmt) == text


class TestIncome:
    def test_quarter_scaling(self):
        assert estimate_income([inflow("1500"), inflow("2500")], 91.3125) == pytest.approx(16_000)

    def test_no_inflows(self):
        assert estimate_income([], 91.3125) == 0.0

    def test_wealthy_boundary(self):
        assert estimate_income([inflow("20000")], 91.3125) == pytest.approx(80_000)

    def test_window_filter(self):
        w = Window(date(2010, 1, 1), date(2010, 1, 10))
        assert estimate_income([inflow("100", 5), inflow("900", 20)], w) == pytest.approx(100 * 36.525)

    def test_empty_window(self):
        with pytest.raises(WindowTooShort):
            estimate_income([], 0)

    @given(st.lists(st.decimals(min_value=Decimal("0.01"), max_value=Decimal(10**5), places=2), max_size=20),
           st.randoms())
    def test_linear_and_order_invariant(self, amounts, rnd):
        txs = [inflow(a, day=1 + k % 28) for k, a in enumerate(amounts)]
        shuffled = list(txs)
        rnd.shuffle(shuffled)
        a = estimate_income(txs, 91)
        assert estimate_income(shuffled, 91) == pytest.approx(a, rel=1e-12)
        doubled = [inflow(2 * t.amount, day=t.timestamp.day) for t in txs]
        assert estimate_income(doubled, 91) == pytest.approx(2 * a, rel=1e-12)


def _dataset(incomes):
    w = Window(date(2010, 1, 1), date(2010, 3, 31))
    txs = []
    for k, inc in enumerate(incomes):
        txs.append(Transaction(f"a{k}", datetime(2010, 1, 2, tzinfo=timezone.utc), "m", "5411", Decimal(1), "outflow"))
        if inc:
            total = Decimal(str(inc)) * w.days / Decimal("365.25")
            txs.append(inflow(total, day=3, account=f"a{k}"))
    return Dataset.from_transactions(txs, w)


class TestCohorts:
    def test_assignment(self):
        ds = Dataset({}, {}, Window(date(2010, 1, 1), date(2010, 3, 31)))
        assert segment_cohorts(ds, INCOME_COHORTS) == {"poor": set(), "wealthy": set(), "middle": set()}
        ds = _dataset([10_000, 80_000.01, 50_000, 0])
        out = segment_cohorts(ds, [POOR, WEALTHY])
        assert out["poor"] == {"a0", "a3"}
        assert out["wealthy"] == {"a1"}
        assert out["middle"] == {"a2"}

    def test_overlapping_specs(self):
        with pytest.raises(OverlappingCohorts):
            segment_cohorts(_dataset([1]), [CohortSpec("x", 0, 100), CohortSpec("y", 50, 200)])
        with pytest.raises(OverlappingCohorts):
            segment_cohorts(_dataset([1]), [CohortSpec("x", 0, 100, max_inclusive=True), CohortSpec("y", 100, 200)])
        segment_cohorts(_dataset([1]), [CohortSpec("x", 0, 100), CohortSpec("y", 100, 200)])

    @given(st.lists(st.floats(0, 300_000), min_size=1, max_size=30))
    def test_partition(self, incomes):
        ds = Dataset(_dataset([0] * len(incomes)).sequences, {f"a{k}": v for k, v in enumerate(incomes)},
                     Window(date(2010, 1, 1), date(2010, 3, 31)))
        out = segment_cohorts(ds, INCOME_COHORTS)
        members = [a for group in out.values() for a in group]
        assert sorted(members) == sorted(ds.accounts)


def test_load_dataset_infers_window(fixture_csv):
    ds, parsed = load_dataset(fixture_csv)
    assert ds.window == Window(date(2010, 3, 1), date(2010, 3, 31))
    assert ds.accounts == ["a1", "a2", "a3"]
    assert ds.sequences["a1"].symbols() == ["m7", "m2", "m7", "Joe's, Deli", "m7", "m9"]
    assert ds.sequences["a2"].symbols()[:2] == ["g1", "f3"]
    assert ds.incomes["a1"] == pytest.approx(4000 * 365.25 / 31)
    assert not parsed.errors
