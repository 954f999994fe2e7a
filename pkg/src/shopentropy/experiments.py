"""Randomization experiments and cohort analyses.

Seeding rule for the shuffle Monte Carlo: run ``r`` of account ``a`` uses

    run_seed = splitmix64(splitmix64(seed XOR account_key(a)) XOR r)

where ``account_key`` is the first 8 bytes (little endian) of the BLAKE2b
digest of the account id. ``shuffle_within_day(seq, run_seed)`` reproduces
any single run, and results do not depend on the order or thread on which
runs execute.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np
from scipy import stats

from .entropy import (
    encode_symbols,
    histogram,
    lz_estimate_codes,
    random_entropy,
    true_entropy,
    uncorrelated_entropy,
)
from .errors import ConfigError, EmptyGroup, NoSharedAccounts, WindowTooShort
from .ingest import Dataset
from .model import EventSequence, Visit

MASK64 = (1 << 64) - 1
SORT_KEY = "merchant_id"
MODES = ("shuffle_day", "sort_week")


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def account_key(account_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(account_id.encode("utf-8"), digest_size=8).digest(), "little")


def run_seed(seed: int, account_id: str, run_index: int) -> int:
    return splitmix64(splitmix64((seed & MASK64) ^ account_key(account_id)) ^ run_index)


@numba.njit(cache=True, nogil=True)
def _splitmix64(x):
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _seed_mt(seed):
    # fold 64 bits into the 32-bit Mersenne Twister seed
    np.random.seed(np.uint32((seed ^ (seed >> np.uint64(32))) & np.uint64(0xFFFFFFFF)))


@numba.njit(cache=True, nogil=True)
def _permute_groups(values, bounds):
    """In-place Fisher-Yates shuffle of each values[bounds[g]:bounds[g+1]]."""
    for g in range(bounds.shape[0] - 1):
        lo = bounds[g]
        for k in range(bounds[g + 1] - 1, lo, -1):
            j = lo + np.random.randint(0, k - lo + 1)
            tmp = values[k]
            values[k] = values[j]
            values[j] = tmp


@numba.njit(cache=True, nogil=True)
def _day_permutation(n, bounds, seed):
    perm = np.arange(n)
    _seed_mt(seed)
    _permute_groups(perm, bounds)
    return perm


@numba.njit(cache=True, nogil=True)
def _shuffle_runs(codes, bounds, key, runs):
    """Entropy of `runs` independently day-shuffled copies of `codes`."""
    n = codes.shape[0]
    out = np.empty(runs)
    for r in range(runs):
        _seed_mt(_splitmix64(key ^ np.uint64(r)))
        perm = np.arange(n)
        _permute_groups(perm, bounds)
        out[r] = lz_estimate_codes(codes[perm])
    return out


def _group_bounds(keys: Sequence) -> np.ndarray:
    """Start offsets of runs of equal consecutive keys, plus the end sentinel."""
    starts = [0] + [k for k in range(1, len(keys)) if keys[k] != keys[k - 1]]
    return np.array(starts + [len(keys)], dtype=np.int64)


def _reassign(seq: EventSequence, order: Sequence[int]) -> EventSequence:
    """Events re-ordered by `order`, placed back onto the original timestamp slots."""
    evs = seq.events
    return seq.with_events(
        Visit(evs[k].timestamp, evs[j].merchant_id, evs[j].mcc) for k, j in enumerate(order)
    )


def shuffle_within_day(seq: EventSequence, seed: int) -> EventSequence:
    """Uniformly permute the events of each calendar day (seeded).

    Day membership and the multiset of events are unchanged; permuted events
    take over the day's original timestamps in order.
    """
    if seq.n_events < 2:
        return seq
    bounds = _group_bounds(seq.days())
    perm = _day_permutation(seq.n_events, bounds, np.uint64(seed & MASK64))
    return _reassign(seq, perm.tolist())


def _week_keys(seq: EventSequence, anchor=None) -> list[int]:
    anchor = anchor or seq.window.start
    return [(d - anchor).days // 7 for d in seq.days()]


def sort_within_week(seq: EventSequence, anchor=None) -> EventSequence:
    """Reorder events by merchant_id inside each 7-day block from the window start."""
    weeks = _week_keys(seq, anchor)
    order = sorted(range(seq.n_events), key=lambda k: (weeks[k], seq.events[k].merchant_id))
    return _reassign(seq, order)


@dataclass(frozen=True)
class SimulationConfig:
    runs: int = 10_000
    sample_size: int = 2_000
    seed: int = 0
    mode: str = "shuffle_day"
    bin_width: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {', '.join(MODES)}, got {self.mode!r}")
        if not (isinstance(self.runs, int) and self.runs >= 1):
            raise ConfigError(f"runs: must be an integer >= 1, got {self.runs!r}")
        if not (isinstance(self.sample_size, int) and self.sample_size >= 1):
            raise ConfigError(f"sample_size: must be an integer >= 1, got {self.sample_size!r}")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed: must fit in 64 bits")
        if not self.bin_width > 0:
            raise ConfigError("bin_width: must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AccountSimulation:
    account_id: str
    baseline: float
    transformed_mean: float
    transformed_sd: float

    @property
    def delta(self) -> float:
        return self.transformed_mean - self.baseline


@dataclass
class SimulationResult:
    config: SimulationConfig
    per_account: list[AccountSimulation]

    def baseline(self) -> np.ndarray:
        return np.array([a.baseline for a in self.per_account])

    def transformed(self) -> np.ndarray:
        return np.array([a.transformed_mean for a in self.per_account])

    def deltas(self) -> np.ndarray:
        return self.transformed() - self.baseline()

    def histograms(self) -> dict:
        w = self.config.bin_width
        return {
            "baseline": histogram(self.baseline(), w, "baseline"),
            "transformed": histogram(self.transformed(), w, "transformed"),
        }

    def to_dict(self) -> dict:
        hists = {
            name: [{"bin_lo": lo, "bin_hi": hi, "count": c} for lo, hi, c, _m in h.rows()]
            for name, h in self.histograms().items()
        }
        return {
            "config": self.config.to_dict(),
            "metadata": {
                "estimator": "lempel-ziv n*log2(n)/sum(lambda)",
                "sort_key": SORT_KEY,
                "week_anchor": "window start",
                "seed_rule": "splitmix64(splitmix64(seed ^ blake2b64(account_id)) ^ run_index)",
                "aggregation": "mean over runs",
            },
            "per_account": [
                {
                    "id": a.account_id,
                    "baseline": a.baseline,
                    "transformed_mean": a.transformed_mean,
                    "transformed_sd": a.transformed_sd,
                }
                for a in self.per_account
            ],
            "histograms": hists,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _simulate_account(seq: EventSequence, config: SimulationConfig) -> AccountSimulation:
    codes = encode_symbols(seq.symbols("merchant"))
    baseline = float(lz_estimate_codes(codes))
    if config.mode == "sort_week":
        value = true_entropy(sort_within_week(seq))
        return AccountSimulation(seq.account_id, baseline, value, 0.0)
    bounds = _group_bounds(seq.days())
    if np.all(np.diff(bounds) < 2):
        # every day holds a single event: the shuffle is the identity
        return AccountSimulation(seq.account_id, baseline, baseline, 0.0)
    key = splitmix64((config.seed & MASK64) ^ account_key(seq.account_id))
    values = _shuffle_runs(codes, bounds, np.uint64(key), config.runs)
    return AccountSimulation(seq.account_id, baseline, float(values.mean()), float(values.std()))


def sample_accounts(dataset: Dataset, sample_size: int, seed: int) -> list[str]:
    eligible = [a for a in dataset.accounts if dataset.sequences[a].n_events >= 2]
    if sample_size > len(eligible):
        raise ConfigError(
            f"sample_size: {sample_size} exceeds the {len(eligible)} accounts with at least 2 events"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(eligible), size=sample_size, replace=False)
    return sorted(eligible[i] for i in picked)


def run_entropy_simulation(
    dataset: Dataset, config: SimulationConfig, threads: int | None = None
) -> SimulationResult:
    """Baseline vs transformed true entropy for a seeded sample of accounts."""
    accounts = sample_accounts(dataset, config.sample_size, config.seed)
    seqs = [dataset.sequences[a] for a in accounts]
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per = list(pool.map(lambda s: _simulate_account(s, config), seqs))
    else:
        per = [_simulate_account(s, config) for s in seqs]
    return SimulationResult(config, per)


def bootstrap_mean_ci(values: Sequence[float], n_boot: int = 10_000, seed: int = 0,
                      quantiles: Sequence[float] = (0.01, 0.99)) -> tuple[float, list[float]]:
    """Sample mean and bootstrap quantiles of the mean."""
    x = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, x.size, size=(n_boot, x.size))].mean(axis=1)
    return float(x.mean()), [float(q) for q in np.quantile(means, quantiles)]


def bootstrap_median_diff(a: Sequence[float], b: Sequence[float], n_boot: int = 10_000, seed: int = 0,
                          level: float = 0.95) -> tuple[float, float, float]:
    """median(a) - median(b) with a percentile bootstrap interval at `level`."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rng = np.random.default_rng(seed)
    ma = np.median(a[rng.integers(0, a.size, size=(n_boot, a.size))], axis=1)
    mb = np.median(b[rng.integers(0, b.size, size=(n_boot, b.size))], axis=1)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(ma - mb, [alpha, 1 - alpha])
    return float(np.median(a) - np.median(b)), float(lo), float(hi)


@dataclass(frozen=True)
class BundlingScore:
    account_id: str
    variance: float
    mean_daily: float
    n_days: int


def daily_counts(seq: EventSequence) -> np.ndarray:
    """Events per calendar day over the whole window, zero days included."""
    counts = np.zeros(seq.window.days, dtype=np.int64)
    for d in seq.days():
        counts[(d - seq.window.start).days] += 1
    return counts


def bundling_score(seq: EventSequence) -> BundlingScore:
    """Population variance of daily event counts over the window."""
    if seq.window.days < 2:
        raise WindowTooShort(f"bundling needs a window of at least 2 days, got {seq.window.days}")
    c = daily_counts(seq)
    d = c.size
    total = int(c.sum())
    # exact integer numerator: zero iff every day has the same count
    num = d * int((c * c).sum()) - total * total
    return BundlingScore(seq.account_id, num / (d * d), total / d, d)


def visits_per_store_variance(seq: EventSequence) -> float:
    counts = np.array(list(Counter(seq.symbols("merchant")).values()), dtype=float)
    if counts.size == 0:
        raise EmptyGroup(f"account {seq.account_id!r} has no events")
    return float(np.mean((counts - counts.mean()) ** 2))


COHORT_STATS = ("n_stores", "s_rand", "s_unc", "gap", "visit_variance", "bundling")


@dataclass
class CohortSummary:
    name: str
    accounts: list[str]
    values: dict[str, np.ndarray]
    skipped: list[str] = field(default_factory=list)

    def median(self, stat: str) -> float:
        return float(np.median(self.values[stat]))

    def histograms(self, bin_widths: Mapping[str, float] | None = None) -> dict:
        widths = {"n_stores": 1.0, "s_rand": 0.25, "s_unc": 0.25, "gap": 0.1,
                  "visit_variance": 5.0, "bundling": 0.25}
        widths.update(bin_widths or {})
        return {s: histogram(self.values[s], widths[s], s) for s in COHORT_STATS}


def cohort_summary(dataset: Dataset, cohorts: Mapping[str, Iterable[str]]) -> dict[str, CohortSummary]:
    """Store counts, entropies, entropy gap, visits-per-store variance and bundling per cohort."""
    out = {}
    for name in sorted(cohorts):
        members = sorted(cohorts[name])
        if not members:
            raise EmptyGroup(f"cohort {name!r} is empty")
        kept, skipped = [], []
        rows = {s: [] for s in COHORT_STATS}
        for acct in members:
            seq = dataset.sequences[acct]
            if seq.n_events == 0:
                skipped.append(acct)
                continue
            kept.append(acct)
            s_rand = random_entropy(seq)
            s_unc = uncorrelated_entropy(seq)
            rows["n_stores"].append(seq.n_merchants)
            rows["s_rand"].append(s_rand)
            rows["s_unc"].append(s_unc)
            rows["gap"].append(s_rand - s_unc)
            rows["visit_variance"].append(visits_per_store_variance(seq))
            rows["bundling"].append(bundling_score(seq).variance)
        if not kept:
            raise EmptyGroup(f"cohort {name!r} has no account with events")
        out[name] = CohortSummary(name, kept, {s: np.array(v, dtype=float) for s, v in rows.items()}, skipped)
    return out


def cohort_summary_csvs(summaries: Mapping[str, CohortSummary]) -> dict[str, str]:
    """One CSV per statistic: per-account values and per-cohort histograms."""
    files = {}
    for stat in COHORT_STATS:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cohort", "account_id", "value"])
        for name in sorted(summaries):
            s = summaries[name]
            for acct, v in zip(s.accounts, s.values[stat]):
                w.writerow([name, acct, repr(float(v))])
        files[f"cohort_{stat}.csv"] = buf.getvalue()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cohort", "bin_lo", "bin_hi", "count"])
        for name in sorted(summaries):
            for lo, hi, c, _m in summaries[name].histograms()[stat].rows():
                w.writerow([name, f"{lo:.6f}", f"{hi:.6f}", c])
        files[f"cohort_{stat}_hist.csv"] = buf.getvalue()
    return files


@dataclass(frozen=True)
class OverlapResult:
    within_group_prob: float
    cross_group_prob: float
    n_pairs_within: int
    n_pairs_cross: int

    def to_dict(self) -> dict:
        return asdict(self)


def _mcc_matrix(dataset: Dataset, accounts: Sequence[str], mccs: Sequence[str]) -> np.ndarray:
    col = {m: k for k, m in enumerate(mccs)}
    mat = np.zeros((len(accounts), len(mccs)))
    for i, acct in enumerate(accounts):
        seq = dataset.sequences[acct]
        if seq.n_events == 0:
            raise EmptyGroup(f"account {acct!r} has no events")
        for m, c in Counter(seq.symbols("mcc")).items():
            mat[i, col[m]] = c / seq.n_events
    return mat


def pair_overlap(p: Mapping[str, float], q: Mapping[str, float]) -> float:
    """Chance that independent draws from two MCC distributions coincide."""
    return float(sum(p[m] * q[m] for m in p if m in q))


def _mccs_of(dataset: Dataset, accounts: Iterable[str]) -> list[str]:
    return sorted({m for a in accounts for m in dataset.sequences[a].symbols("mcc")})


def _check_groups(*groups) -> None:
    for g in groups:
        if not g:
            raise EmptyGroup("overlap needs non-empty groups")


def overlap_probability(dataset: Dataset, group_a: Iterable[str], group_b: Iterable[str] | None = None) -> OverlapResult:
    """Closed-form per-event coincidence of MCCs.

    ``within_group_prob`` averages over unordered distinct pairs inside A;
    ``cross_group_prob`` over pairs (a in A, b in B, a != b). With B omitted,
    B = A.
    """
    a = sorted(set(group_a))
    b = a if group_b is None else sorted(set(group_b))
    _check_groups(a, b)
    mccs = _mccs_of(dataset, set(a) | set(b))
    pa = _mcc_matrix(dataset, a, mccs)
    pb = _mcc_matrix(dataset, b, mccs)

    sa = pa.sum(axis=0)
    self_a = float((pa * pa).sum())
    n_within = len(a) * (len(a) - 1) // 2
    within = (float(sa @ sa) - self_a) / 2 / n_within if n_within else float("nan")

    shared = sorted(set(a) & set(b))
    diag = 0.0
    if shared:
        ps = _mcc_matrix(dataset, shared, mccs)
        diag = float((ps * ps).sum())
    n_cross = len(a) * len(b) - len(shared)
    cross = (float(sa @ pb.sum(axis=0)) - diag) / n_cross if n_cross else float("nan")
    return OverlapResult(within, cross, n_within, n_cross)


def _event_table(dataset: Dataset, accounts: Sequence[str], mccs: Sequence[str]):
    col = {m: k for k, m in enumerate(mccs)}
    codes, offsets, lengths = [], [], []
    for acct in accounts:
        seq = dataset.sequences[acct]
        if seq.n_events == 0:
            raise EmptyGroup(f"account {acct!r} has no events")
        offsets.append(len(codes))
        lengths.append(seq.n_events)
        codes.extend(col[m] for m in seq.symbols("mcc"))
    return np.array(codes), np.array(offsets), np.array(lengths)


def overlap_monte_carlo(
    dataset: Dataset,
    group_a: Iterable[str],
    group_b: Iterable[str] | None = None,
    samples: int = 1_000_000,
    seed: int = 0,
) -> OverlapResult:
    """Sampling estimate of :func:`overlap_probability`: draw a pair, then one actual event of each."""
    a = sorted(set(group_a))
    b = a if group_b is None else sorted(set(group_b))
    _check_groups(a, b)
    union = sorted(set(a) | set(b))
    index = {acct: k for k, acct in enumerate(union)}
    codes, offsets, lengths = _event_table(dataset, union, _mccs_of(dataset, union))
    rng = np.random.default_rng(seed)

    def coincide(x, y):
        ex = offsets[x] + (rng.random(x.size) * lengths[x]).astype(np.int64)
        ey = offsets[y] + (rng.random(y.size) * lengths[y]).astype(np.int64)
        return float(np.mean(codes[ex] == codes[ey]))

    ia = np.array([index[x] for x in a])
    ib = np.array([index[x] for x in b])
    within = float("nan")
    if len(a) >= 2:
        i = rng.integers(0, len(a), size=samples)
        j = rng.integers(0, len(a) - 1, size=samples)
        j = j + (j >= i)
        within = coincide(ia[i], ia[j])
    x = ia[rng.integers(0, len(a), size=samples)]
    y = ib[rng.integers(0, len(b), size=samples)]
    clash = x == y
    while clash.any():
        if len(a) == 1 and len(b) == 1:
            break
        x[clash] = ia[rng.integers(0, len(a), size=int(clash.sum()))]
        y[clash] = ib[rng.integers(0, len(b), size=int(clash.sum()))]
        clash = x == y
    cross = coincide(x, y) if not clash.any() else float("nan")
    shared = len(set(a) & set(b))
    return OverlapResult(within, cross, len(a) * (len(a) - 1) // 2, len(a) * len(b) - shared)


def overlap_report(dataset: Dataset, top: Iterable[str], bottom: Iterable[str]) -> dict:
    """Within-top, within-bottom, pooled-within and cross (top x bottom) overlap."""
    top, bottom = sorted(set(top)), sorted(set(bottom))
    t = overlap_probability(dataset, top)
    b = overlap_probability(dataset, bottom)
    x = overlap_probability(dataset, top, bottom)
    n = t.n_pairs_within + b.n_pairs_within
    pooled = (
        (np.nan_to_num(t.within_group_prob) * t.n_pairs_within
         + np.nan_to_num(b.within_group_prob) * b.n_pairs_within) / n
        if n else float("nan")
    )
    return {
        "within_top": t.within_group_prob,
        "within_bottom": b.within_group_prob,
        "pooled_within": float(pooled),
        "cross": x.cross_group_prob,
        "n_pairs": {
            "within_top": t.n_pairs_within,
            "within_bottom": b.n_pairs_within,
            "pooled_within": n,
            "cross": x.n_pairs_cross,
        },
    }


def top_merchant(seq: EventSequence) -> tuple[str, str]:
    """(merchant_id, mcc) of the most visited merchant; ties go to the smaller merchant_id."""
    counts = Counter(seq.symbols("merchant"))
    if not counts:
        raise EmptyGroup(f"account {seq.account_id!r} has no events")
    best = min(counts, key=lambda m: (-counts[m], m))
    mcc = next(e.mcc for e in seq.events if e.merchant_id == best)
    return best, mcc


def top_merchant_profile(dataset: Dataset, accounts: Iterable[str]) -> list[tuple[str, float]]:
    """Share of accounts whose top-ranked merchant carries each MCC, largest first."""
    accts = [a for a in sorted(set(accounts)) if dataset.sequences[a].n_events > 0]
    if not accts:
        raise EmptyGroup("top merchant profile of an empty account set")
    tally = Counter(top_merchant(dataset.sequences[a])[1] for a in accts)
    return sorted(((m, c / len(accts)) for m, c in tally.items()), key=lambda mc: (-mc[1], mc[0]))


@dataclass
class StabilityResult:
    accounts: list[str]
    s_unc: np.ndarray  # shape (n, 2): window a, window b
    s_true: np.ndarray
    rank_corr_unc: float
    rank_corr_true: float

    @property
    def delta_unc(self) -> np.ndarray:
        return self.s_unc[:, 1] - self.s_unc[:, 0]

    @property
    def delta_true(self) -> np.ndarray:
        return self.s_true[:, 1] - self.s_true[:, 0]

    def to_dict(self) -> dict:
        return {
            "rank_corr_unc": self.rank_corr_unc,
            "rank_corr_true": self.rank_corr_true,
            "per_account": [
                {
                    "id": acct,
                    "s_unc_a": float(self.s_unc[k, 0]),
                    "s_unc_b": float(self.s_unc[k, 1]),
                    "delta_unc": float(self.delta_unc[k]),
                    "s_true_a": float(self.s_true[k, 0]),
                    "s_true_b": float(self.s_true[k, 1]),
                    "delta_true": float(self.delta_true[k]),
                }
                for k, acct in enumerate(self.accounts)
            ],
        }


def _spearman(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 2:
        return float("nan")
    if np.array_equal(x, y):
        return 1.0
    return float(stats.spearmanr(x, y).statistic)


def window_stability(dataset_a: Dataset, dataset_b: Dataset) -> StabilityResult:
    """Entropy persistence of shared accounts between two observation windows."""
    shared = sorted(
        a for a in set(dataset_a.sequences) & set(dataset_b.sequences)
        if dataset_a.sequences[a].n_events >= 2 and dataset_b.sequences[a].n_events >= 2
    )
    if not shared:
        raise NoSharedAccounts("the two windows share no account with at least 2 events")
    unc = np.array([[uncorrelated_entropy(d.sequences[a]) for d in (dataset_a, dataset_b)] for a in shared])
    tru = np.array([[true_entropy(d.sequences[a]) for d in (dataset_a, dataset_b)] for a in shared])
    return StabilityResult(shared, unc, tru, _spearman(unc[:, 0], unc[:, 1]), _spearman(tru[:, 0], tru[:, 1]))
