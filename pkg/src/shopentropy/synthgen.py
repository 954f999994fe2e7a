"""Synthetic shopper populations and oracle sequences with known entropy rates.

The agent model is this toolkit's own construction (nothing here is fitted to
real data). Each agent has a private set of stores ranked by a Zipf
preference over a random permutation, shops on trip days drawn from a daily
Poisson process, buys a geometric number of items per trip, and picks each
store either from a fixed personal cycle (with probability
``routine_strength``) or independently from its preference.

Seeding: agent parameters come from ``SeedSequence([seed, cohort, agent])``
and events from ``SeedSequence([seed, cohort, agent, window_start_ordinal])``,
so regenerating a different window keeps each agent's parameters and
generation order never matters.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from datetime import date, datetime, timedelta, timezone
from decimal import ROUND_DOWN, Decimal
from typing import IO, Any, Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError
from .ingest import DAYS_PER_YEAR, Dataset, parse_stream, write_transactions
from .model import INFLOW, OUTFLOW, Transaction, Window

# Illustrative category mix for stores whose MCC is not planted explicitly.
DEFAULT_MCC_WEIGHTS = {
    "5411": 0.25,  # grocery stores
    "5541": 0.15,  # gas stations
    "5814": 0.15,  # fast food
    "5812": 0.12,  # restaurants
    "5912": 0.08,  # drug stores
    "5311": 0.08,  # department stores
    "5499": 0.07,  # misc. food stores
    "5999": 0.10,  # misc. retail
}
INFLOW_MERCHANT = "PAYROLL"
INFLOW_MCC = "4829"
PAY_PERIOD_DAYS = 14
MODEL_LABEL = "shopentropy synthetic agent model (AgentParams); constructed, not fitted to real data"


@dataclass(frozen=True)
class AgentParams:
    n_stores: int = 8
    zipf_s: float = 1.5
    trips_per_week: float = 4.0
    burst_q: float = 0.7
    routine_strength: float = 0.0
    income: float = 40_000.0
    mcc_assignment: tuple[str, ...] = ()
    cycle_length: int = 5
    mcc_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MCC_WEIGHTS))

    def __post_init__(self):
        if not (isinstance(self.n_stores, (int, np.integer)) and self.n_stores >= 1):
            raise ConfigError(f"n_stores: must be an integer >= 1, got {self.n_stores!r}")
        if not self.zipf_s > 0:
            raise ConfigError(f"zipf_s: must be > 0, got {self.zipf_s!r}")
        if not self.trips_per_week >= 0:
            raise ConfigError(f"trips_per_week: must be >= 0, got {self.trips_per_week!r}")
        if not 0 < self.burst_q <= 1:
            raise ConfigError(f"burst_q: must lie in (0, 1], got {self.burst_q!r}")
        if not 0 <= self.routine_strength <= 1:
            raise ConfigError(f"routine_strength: must lie in [0, 1], got {self.routine_strength!r}")
        if not self.income >= 0:
            raise ConfigError(f"income: must be >= 0, got {self.income!r}")
        if not (isinstance(self.cycle_length, (int, np.integer)) and self.cycle_length >= 1):
            raise ConfigError(f"cycle_length: must be an integer >= 1, got {self.cycle_length!r}")
        for code in self.mcc_assignment:
            if not (isinstance(code, str) and len(code) == 4 and code.isdigit()):
                raise ConfigError(f"mcc_assignment: {code!r} is not a 4-digit MCC")
        if not self.mcc_weights or any(w < 0 for w in self.mcc_weights.values()):
            raise ConfigError("mcc_weights: need at least one non-negative weight")

    def store_probabilities(self) -> np.ndarray:
        w = np.arange(1, self.n_stores + 1, dtype=float) ** -self.zipf_s
        return w / w.sum()


_PARAM_NAMES = {f.name for f in fields(AgentParams)}
_INT_PARAMS = {"n_stores", "cycle_length"}


@dataclass(frozen=True)
class CohortMix:
    """A named group of agents; numeric params may be ``[lo, hi]`` ranges drawn per agent."""

    name: str
    count: int
    params: Mapping[str, Any]

    def __post_init__(self):
        if not self.name or "-" in self.name:
            raise ConfigError(f"cohorts.name: must be non-empty without '-', got {self.name!r}")
        if not (isinstance(self.count, int) and self.count >= 0):
            raise ConfigError(f"cohorts[{self.name}].count: must be a non-negative integer")
        unknown = set(self.params) - _PARAM_NAMES
        if unknown:
            raise ConfigError(f"cohorts[{self.name}].params: unknown field(s) {sorted(unknown)}")
        # validate the range endpoints eagerly so bad specs fail before generation
        for corner in (0, 1):
            self.resolve(None, corner=corner)

    def resolve(self, rng: np.random.Generator | None, corner: int = 0) -> AgentParams:
        values = {}
        for key, val in self.params.items():
            if key in ("mcc_assignment", "mcc_weights"):
                values[key] = tuple(val) if key == "mcc_assignment" else dict(val)
                continue
            if isinstance(val, (list, tuple)):
                if len(val) != 2:
                    raise ConfigError(f"cohorts[{self.name}].params.{key}: range must be [lo, hi]")
                lo, hi = val
                if hi < lo:
                    raise ConfigError(f"cohorts[{self.name}].params.{key}: range hi < lo")
                if rng is None:
                    val = (lo, hi)[corner]
                elif key in _INT_PARAMS:
                    val = int(rng.integers(int(lo), int(hi) + 1))
                else:
                    val = float(rng.uniform(lo, hi))
            if key in _INT_PARAMS:
                if not float(val).is_integer():
                    raise ConfigError(f"cohorts[{self.name}].params.{key}: must be an integer")
                val = int(val)
            values[key] = val
        try:
            return AgentParams(**values)
        except ConfigError as exc:
            raise ConfigError(f"cohorts[{self.name}].params.{exc}") from None
        except TypeError as exc:
            raise ConfigError(f"cohorts[{self.name}].params: {exc}") from None


@dataclass(frozen=True)
class PopulationSpec:
    cohorts: tuple[CohortMix, ...]
    window: Window
    seed: int = 0
    tz: str = "UTC"

    def __post_init__(self):
        if self.window.days < 7:
            raise ConfigError(f"window: must span at least 7 days, got {self.window.days}")
        names = [c.name for c in self.cohorts]
        if len(set(names)) != len(names):
            raise ConfigError("cohorts.name: duplicate cohort names")

    @property
    def n_agents(self) -> int:
        return sum(c.count for c in self.cohorts)

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "PopulationSpec":
        if not isinstance(obj, Mapping):
            raise ConfigError("spec: expected a JSON object")
        for key in ("cohorts", "window"):
            if key not in obj:
                raise ConfigError(f"{key}: missing")
        win = obj["window"]
        try:
            if isinstance(win, Mapping):
                window = Window.parse(win["start"], win["end"])
            else:
                window = Window.parse(win[0], win[1])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ConfigError(f"window: expected {{start, end}} ISO dates ({exc})") from None
        if not isinstance(obj["cohorts"], list):
            raise ConfigError("cohorts: expected a list")
        cohorts = []
        for k, c in enumerate(obj["cohorts"]):
            if not isinstance(c, Mapping):
                raise ConfigError(f"cohorts[{k}]: expected an object")
            for key in ("name", "count"):
                if key not in c:
                    raise ConfigError(f"cohorts[{k}].{key}: missing")
            params = c.get("params", {k2: v for k2, v in c.items() if k2 not in ("name", "count")})
            cohorts.append(CohortMix(str(c["name"]), c["count"], dict(params)))
        seed = obj.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed: must be a non-negative integer, got {seed!r}")
        return cls(tuple(cohorts), window, seed, str(obj.get("tz", "UTC")))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PopulationSpec":
        try:
            with open(path, encoding="utf-8") as handle:
                obj = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec: invalid JSON ({exc})") from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return {
            "model": MODEL_LABEL,
            "cohorts": [{"name": c.name, "count": c.count, "params": dict(c.params)} for c in self.cohorts],
            "window": self.window.to_dict(),
            "seed": self.seed,
            "tz": self.tz,
        }


def _cents(x: float | Decimal) -> Decimal:
    return Decimal(str(x)).quantize(Decimal("0.01"))


def _inflows(account_id: str, income: float, window: Window) -> list[Transaction]:
    total = _cents(income * window.days / DAYS_PER_YEAR)
    if total <= 0:
        return []
    n_pay = max(1, math.ceil(window.days / PAY_PERIOD_DAYS))
    n_pay = min(n_pay, int(total / Decimal("0.01")))
    share = (total / n_pay).quantize(Decimal("0.01"), rounding=ROUND_DOWN)
    amounts = [share] * (n_pay - 1) + [total - share * (n_pay - 1)]
    out = []
    for k, amount in enumerate(amounts):
        day = window.start + timedelta(days=k * PAY_PERIOD_DAYS)
        ts = datetime(day.year, day.month, day.day, 6, 0, 0, tzinfo=timezone.utc)
        out.append(Transaction(account_id, ts, INFLOW_MERCHANT, INFLOW_MCC, amount, INFLOW))
    return out


def _day_start_utc(day: date, tz: str) -> datetime:
    from .model import get_tz

    local = datetime(day.year, day.month, day.day, tzinfo=get_tz(tz))
    return local.astimezone(timezone.utc)


def generate_agent(
    account_id: str, params: AgentParams, window: Window, rng: np.random.Generator,
    param_rng: np.random.Generator, tz: str = "UTC",
) -> list[Transaction]:
    """Transactions (purchases and inflows) of one agent, time-ordered."""
    n = params.n_stores
    store_ids = [f"{account_id}-{k:03d}" for k in range(n)]
    by_rank = param_rng.permutation(n)  # store index at preference rank r
    if params.mcc_assignment:
        assigned = list(params.mcc_assignment)
        mcc_by_rank = [assigned[r % len(assigned)] for r in range(n)]
    else:
        codes = sorted(params.mcc_weights)
        w = np.array([params.mcc_weights[c] for c in codes], dtype=float)
        mcc_by_rank = [codes[i] for i in param_rng.choice(len(codes), size=n, p=w / w.sum())]
    probs = params.store_probabilities()
    cycle = param_rng.choice(n, size=params.cycle_length, p=probs)

    days = window.days
    trips = rng.poisson(params.trips_per_week / 7.0, size=days)
    n_trips = int(trips.sum())
    bursts = rng.geometric(params.burst_q, size=n_trips)
    trip_day = np.repeat(np.arange(days), trips)
    trip_start = rng.integers(8 * 3600, 20 * 3600, size=n_trips)
    n_events = int(bursts.sum())
    ev_trip = np.repeat(np.arange(n_trips), bursts)
    first = np.cumsum(bursts) - bursts  # index of each trip's first event
    gaps = rng.integers(300, 1800, size=n_events)
    gaps[first] = 0
    elapsed = np.cumsum(gaps)
    secs = trip_start[ev_trip] + elapsed - elapsed[first][ev_trip]
    secs = np.minimum(secs, 86_399)
    ev_day = trip_day[ev_trip]
    order = np.lexsort((secs, ev_day))
    ev_day, secs = ev_day[order], secs[order]

    routine = rng.random(n_events) < params.routine_strength
    iid_rank = rng.choice(n, size=n_events, p=probs)
    cycle_pos = np.cumsum(routine) - 1
    ranks = np.where(routine, cycle[cycle_pos % params.cycle_length] if n_events else 0, iid_rank)
    amounts = np.maximum(rng.lognormal(3.0, 0.8, size=n_events), 0.01)

    day_starts = [_day_start_utc(window.start + timedelta(days=d), tz) for d in range(days)]
    out = []
    for d, s, r, a in zip(ev_day.tolist(), secs.tolist(), ranks.tolist(), amounts.tolist()):
        ts = day_starts[d] + timedelta(seconds=s)
        out.append(Transaction(account_id, ts, store_ids[by_rank[r]], mcc_by_rank[r], _cents(a), OUTFLOW))
    out.extend(_inflows(account_id, params.income, window))
    out.sort(key=lambda t: t.timestamp)
    return out


def agent_seeds(seed: int, cohort_index: int, agent_index: int, window: Window):
    base = [seed, cohort_index, agent_index]
    return (
        np.random.default_rng(np.random.SeedSequence(base)),
        np.random.default_rng(np.random.SeedSequence(base + [window.start.toordinal()])),
    )


def generate_transactions(spec: PopulationSpec) -> list[Transaction]:
    out: list[Transaction] = []
    for ci, cohort in enumerate(spec.cohorts):
        for ai in range(cohort.count):
            param_rng, event_rng = agent_seeds(spec.seed, ci, ai, spec.window)
            params = cohort.resolve(param_rng)
            account_id = f"{cohort.name}-{ai:05d}"
            out.extend(generate_agent(account_id, params, spec.window, event_rng, param_rng, spec.tz))
    return out


def write_population(spec: PopulationSpec, handle: IO[str]) -> int:
    """Write the population as ingest-schema CSV; returns the number of rows."""
    txs = generate_transactions(spec)
    write_transactions(txs, handle, "csv")
    return len(txs)


def generate_population(
    spec: PopulationSpec, window: Window | None = None, seed: int | None = None
) -> Dataset:
    """Generate a population and load it back through the CSV parser."""
    if window is not None or seed is not None:
        spec = replace(
            spec,
            window=window if window is not None else spec.window,
            seed=seed if seed is not None else spec.seed,
        )
    buf = io.StringIO()
    write_population(spec, buf)
    buf.seek(0)
    parsed = parse_stream(buf, "csv", strict=True)
    return Dataset.from_transactions(parsed.transactions, spec.window, tz=spec.tz)


# Presets used by the acceptance suite and the CLI (``generate --preset``).

def _window(days: int, start: date = date(2010, 1, 4)) -> Window:
    return Window(start, start + timedelta(days=days - 1))


def routine_population(count: int = 2000, days: int = 91, seed: int = 2010) -> PopulationSpec:
    """Habitual shoppers: stable store preferences, small trips, order mostly unplanned."""
    params = {
        "n_stores": [4, 14],
        "zipf_s": [0.8, 1.6],
        "trips_per_week": [3.0, 6.0],
        "burst_q": [0.6, 0.9],
        "routine_strength": [0.0, 0.3],
        "cycle_length": [3, 7],
        "income": [20_000, 70_000],
    }
    return PopulationSpec((CohortMix("routine", count, params),), _window(days), seed)


def zipf_population(s: float = 4.0, count: int = 2000, days: int = 90, seed: int = 4) -> PopulationSpec:
    params = {
        "n_stores": 30,
        "zipf_s": s,
        "trips_per_week": 10.0,
        "burst_q": 0.5,
        "routine_strength": 0.0,
    }
    return PopulationSpec((CohortMix("zipf", count, params),), _window(days), seed)


def income_population(count: int = 1000, days: int = 91, seed: int = 1980) -> PopulationSpec:
    """Poor vs wealthy contrast: the wealthy use more stores, buy more per trip and bundle trips."""
    poor = {
        "n_stores": [3, 8],
        "zipf_s": [0.8, 1.2],
        "trips_per_week": [4.0, 6.0],
        "burst_q": 0.95,
        "routine_strength": [0.2, 0.6],
        "income": [6_000, 15_000],
    }
    wealthy = {
        "n_stores": [12, 30],
        "zipf_s": [1.2, 1.6],
        "trips_per_week": [2.5, 3.5],
        "burst_q": [0.2, 0.3],
        "routine_strength": [0.2, 0.6],
        "income": [90_000, 200_000],
    }
    return PopulationSpec(
        (CohortMix("poor", count, poor), CohortMix("wealthy", count, wealthy)), _window(days), seed
    )


def hub_population(count: int = 200, days: int = 91, seed: int = 77) -> PopulationSpec:
    """Planted top-merchant categories: grocery hubs (predictable) vs gas hubs (varied)."""
    grocery = {
        "n_stores": [3, 6],
        "zipf_s": 3.0,
        "routine_strength": 0.5,
        "cycle_length": 2,
        "mcc_assignment": ["5411", "5812", "5411", "5812"],
    }
    gas = {
        "n_stores": [15, 25],
        "zipf_s": 1.0,
        "routine_strength": 0.0,
        "mcc_assignment": ["5541", "5541", "5541", "5814", "5999", "5311", "5912", "5499"],
    }
    return PopulationSpec(
        (CohortMix("grocery", count, grocery), CohortMix("gas", count, gas)), _window(days), seed
    )


PRESETS = {
    "routine": routine_population,
    "zipf": zipf_population,
    "income": income_population,
    "hubs": hub_population,
}


@dataclass(frozen=True)
class OracleSequence:
    symbols: np.ndarray
    entropy_rate: float


def oracle_iid(k: int, n: int, seed: int) -> OracleSequence:
    """iid uniform symbols over an alphabet of size k; entropy rate log2 k."""
    if k < 1 or n < 1:
        raise ConfigError("oracle_iid needs k >= 1 and n >= 1")
    rng = np.random.default_rng(seed)
    return OracleSequence(rng.integers(0, k, size=n).astype(np.int32), math.log2(k))


def stationary_distribution(P: np.ndarray, tol: float = 1e-12, max_steps: int = 1_000_000) -> np.ndarray:
    """Stationary distribution by power iteration on the lazy chain (P + I) / 2.

    The lazy chain shares the stationary distribution of P but is aperiodic,
    so the iteration converges for periodic chains too.
    """
    P = np.asarray(P, dtype=float)
    lazy = 0.5 * (P + np.eye(P.shape[0]))
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_steps):
        nxt = pi @ lazy
        if np.abs(nxt - pi).max() < tol:
            return nxt / nxt.sum()
        pi = nxt
    raise ConfigError(f"power iteration did not converge in {max_steps} steps")


def markov_entropy_rate(P: np.ndarray) -> float:
    P = np.asarray(P, dtype=float)
    pi = stationary_distribution(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, -P * np.log2(P), 0.0)
    return float(pi @ terms.sum(axis=1))


def _check_chain(P: np.ndarray) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise ConfigError("transition matrix must be square")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
        raise ConfigError("transition matrix rows must be non-negative and sum to 1")
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise ConfigError("transition matrix describes a reducible chain")


def oracle_markov(P: Sequence[Sequence[float]], n: int, seed: int) -> OracleSequence:
    """Sample n states of a stationary order-1 chain; attaches its analytic entropy rate."""
    P = np.asarray(P, dtype=float)
    _check_chain(P)
    pi = stationary_distribution(P)
    rate = markov_entropy_rate(P)
    rng = np.random.default_rng(seed)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(n)
    out = np.empty(n, dtype=np.int32)
    state = int(np.searchsorted(np.cumsum(pi), u[0], side="right"))
    state = min(state, P.shape[0] - 1)
    out[0] = state
    for t in range(1, n):
        state = int(np.searchsorted(cum[state], u[t], side="right"))
        out[t] = state
    return OracleSequence(out, rate)


def random_chain(k: int, rng: np.random.Generator, concentration: float = 1.0) -> np.ndarray:
    """Dense random stochastic matrix with Dirichlet rows (irreducible almost surely)."""
    return rng.dirichlet(np.full(k, concentration), size=k)
