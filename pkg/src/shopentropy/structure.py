"""Rank-frequency (Zipf) analysis and transition networks."""

from __future__ import annotations

import csv
import io
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .entropy import uncorrelated_entropy
from .errors import EmptyGroup, EmptySequence, FitError, SequenceTooShort
from .model import EventSequence

POPULATION = "population"
FIT_METHOD = "ols-loglog"


@dataclass(frozen=True)
class RankCurve:
    """Visit probability by rank (1 = most visited store).

    ``members`` keeps the descending count vectors the curve was built from
    (one per individual), which the bootstrap resamples.
    """

    ranks: np.ndarray
    probabilities: np.ndarray
    source: str = POPULATION
    members: tuple[np.ndarray, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.ranks)
        if r.size and (r[0] != 1 or np.any(np.diff(r) != 1)):
            raise ValueError("ranks must run 1, 2, 3, ...")
        p = np.asarray(self.probabilities, dtype=float)
        # A population mean at rank k only averages individuals reaching k, so
        # it can rise past a rank where small portfolios drop out.
        if self.source != POPULATION and np.any(np.diff(p) > 1e-12):
            raise ValueError("rank probabilities must be non-increasing")

    @property
    def points(self) -> list[tuple[int, float]]:
        return [(int(r), float(p)) for r, p in zip(self.ranks, self.probabilities)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rank", "probability"])
        for r, p in self.points:
            writer.writerow([r, repr(p)])
        return buf.getvalue()


def _sorted_counts(seq: EventSequence) -> np.ndarray:
    counts = Counter(seq.symbols("merchant"))
    return np.array(sorted(counts.values(), reverse=True), dtype=np.int64)


def _normalized_matrix(members: Sequence[np.ndarray]) -> np.ndarray:
    """Individuals x ranks matrix of normalized curves, NaN past each max rank."""
    width = max(len(m) for m in members)
    mat = np.full((len(members), width), np.nan)
    for k, m in enumerate(members):
        mat[k, : len(m)] = m / m.sum()
    return mat


def rank_curve_from_counts(members: Sequence[Sequence[int]], source: str = POPULATION) -> RankCurve:
    """Rank-wise mean of individual normalized rank curves.

    An individual with fewer stores contributes nothing beyond its last rank.
    """
    vecs = [np.array(sorted((c for c in m if c > 0), reverse=True), dtype=np.int64) for m in members]
    vecs = [v for v in vecs if v.size]
    if not vecs:
        raise EmptyGroup("rank curve of empty input")
    mat = _normalized_matrix(vecs)
    probs = np.nanmean(mat, axis=0)
    ranks = np.arange(1, mat.shape[1] + 1)
    return RankCurve(ranks, probs, source, tuple(vecs))


def rank_curve(data: EventSequence | Iterable[EventSequence]) -> RankCurve:
    """Individual curve for one sequence, population curve for several."""
    if isinstance(data, EventSequence):
        if data.n_events == 0:
            raise EmptySequence(f"account {data.account_id!r} has no events")
        return rank_curve_from_counts([_sorted_counts(data)], source=data.account_id)
    return rank_curve_from_counts([_sorted_counts(s) for s in data])


@dataclass(frozen=True)
class ZipfFit:
    s: float
    s_stderr: float
    r_squared: float
    rank_range: tuple[int, int]
    n_points: int
    n_boot: int = 0
    method: str = FIT_METHOD

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "s_stderr": self.s_stderr,
            "r_squared": self.r_squared,
            "rank_range": list(self.rank_range),
            "n_points": self.n_points,
            "n_boot": self.n_boot,
            "method": self.method,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _loglog_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """OLS slopes of each row of y (…, k) against x (k,)."""
    xc = x - x.mean()
    return ((y - y.mean(axis=-1, keepdims=True)) @ xc) / (xc @ xc)


def fit_zipf(
    curve: RankCurve,
    rank_range: tuple[int, int],
    n_boot: int = 1000,
    seed: int = 0,
) -> ZipfFit:
    """Least-squares fit of log p against log rank within `rank_range` (inclusive).

    ``s`` is minus the slope. The standard error is a bootstrap over
    individuals for population curves and over visits for individual curves;
    curves built from bare points get a zero standard error.
    """
    lo, hi = int(rank_range[0]), int(rank_range[1])
    if lo < 1 or hi < lo:
        raise FitError(f"invalid rank range {rank_range}")
    mask = (curve.ranks >= lo) & (curve.ranks <= hi)
    ranks = np.asarray(curve.ranks)[mask]
    probs = np.asarray(curve.probabilities, dtype=float)[mask]
    if ranks.size < 3:
        raise FitError(f"need at least 3 points in rank range {rank_range}, have {ranks.size}")
    if np.any(probs <= 0):
        raise FitError("zero probability inside the fitted rank range")
    x = np.log(ranks.astype(float))
    y = np.log(probs)
    slope = float(_loglog_slopes(x, y))
    intercept = y.mean() - slope * x.mean()
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    s = -slope
    if not s > 0:
        raise FitError(f"rank curve shows no decay in range {rank_range} (slope {slope})")

    stderr, used = 0.0, 0
    if curve.members and n_boot > 0:
        boot = _bootstrap_exponents(curve, ranks, n_boot, seed)
        used = int(boot.size)
        if used > 1:
            stderr = float(np.std(boot, ddof=1))
    return ZipfFit(s, stderr, r2, (lo, hi), int(ranks.size), used)


def _bootstrap_exponents(curve: RankCurve, ranks: np.ndarray, n_boot: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cols = ranks - 1
    x = np.log(ranks.astype(float))
    if curve.source == POPULATION:
        sub = _normalized_matrix(curve.members)[:, cols]
        idx = rng.integers(0, len(curve.members), size=(n_boot, len(curve.members)))
        with warnings.catch_warnings():
            # replicates where no individual reaches a rank give NaN; dropped below
            warnings.simplefilter("ignore", RuntimeWarning)
            means = np.nanmean(sub[idx], axis=1)
    else:
        counts = curve.members[0]
        n = int(counts.sum())
        draws = rng.multinomial(n, counts / n, size=n_boot)
        draws = -np.sort(-draws, axis=1)
        padded = np.zeros((n_boot, max(draws.shape[1], int(cols.max()) + 1)))
        padded[:, : draws.shape[1]] = draws / n
        means = padded[:, cols]
    ok = np.all(np.isfinite(means) & (means > 0), axis=1)
    return -_loglog_slopes(x, np.log(means[ok]))


@dataclass(frozen=True)
class TransitionGraph:
    """Directed graph of consecutive visits; edge weight = P(next = b | current = a)."""

    nodes: Mapping[str, int]
    pair_counts: Mapping[tuple[str, str], int]
    level: str = "merchant"

    @property
    def edges(self) -> dict[tuple[str, str], float]:
        out_totals: Counter = Counter()
        for (a, _b), c in self.pair_counts.items():
            out_totals[a] += c
        return {(a, b): c / out_totals[a] for (a, b), c in sorted(self.pair_counts.items())}

    def out_weights(self, node: str) -> dict[str, float]:
        return {b: w for (a, b), w in self.edges.items() if a == node}

    def out_degrees(self) -> dict[str, int]:
        deg = Counter(a for a, _b in self.pair_counts)
        return {n: deg.get(n, 0) for n in sorted(self.nodes)}

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n, "count": int(self.nodes[n])} for n in sorted(self.nodes)],
            "edges": [{"from": a, "to": b, "weight": w} for (a, b), w in self.edges.items()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_dot(self, name: str = "transitions") -> str:
        q = lambda s: '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'  # noqa: E731
        lines = [f"digraph {name} {{"]
        for n in sorted(self.nodes):
            lines.append(f"  {q(n)} [count={int(self.nodes[n])}];")
        for (a, b), w in self.edges.items():
            lines.append(f'  {q(a)} -> {q(b)} [weight="{w:.6f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _pair_counts(symbols: Sequence[str]) -> Counter:
    return Counter(zip(symbols[:-1], symbols[1:]))


def transition_graph(seq: EventSequence, level: str = "merchant") -> TransitionGraph:
    symbols = seq.symbols(level)
    if len(symbols) < 2:
        raise SequenceTooShort(f"transition graph needs at least 2 events, got {len(symbols)}")
    return TransitionGraph(dict(sorted(Counter(symbols).items())), dict(_pair_counts(symbols)), level)


def population_graph(sequences: Iterable[EventSequence], level: str = "mcc") -> TransitionGraph:
    """Pool pair counts across accounts; pairs never span two accounts."""
    nodes: Counter = Counter()
    pairs: Counter = Counter()
    seen = False
    for seq in sequences:
        seen = True
        symbols = seq.symbols(level)
        nodes.update(symbols)
        pairs.update(_pair_counts(symbols))
    if not seen:
        raise EmptyGroup("population graph of an empty account set")
    return TransitionGraph(dict(sorted(nodes.items())), dict(pairs), level)


def predictable_quintile(
    sequences: Iterable[EventSequence],
    quintile: str = "top",
    entropy=uncorrelated_entropy,
    n_strata: int = 5,
) -> set[str]:
    """Most (``top``) or least (``bottom``) predictable fifth of accounts.

    Accounts are first split into `n_strata` strata of total visit count so
    the selection compares like with like; within each stratum the fifth with
    the lowest (top) or highest (bottom) entropy is taken. Ties break on
    account_id. Accounts without events are ignored.
    """
    if quintile not in ("top", "bottom"):
        raise ValueError(f"quintile must be 'top' or 'bottom', got {quintile!r}")
    seqs = [s for s in sequences if s.n_events > 0]
    if len(seqs) < 5 * n_strata:
        raise EmptyGroup(f"need at least {5 * n_strata} accounts with events to stratify, got {len(seqs)}")
    by_volume = sorted(seqs, key=lambda s: (s.n_events, s.account_id))
    chosen: set[str] = set()
    for stratum in np.array_split(np.arange(len(by_volume)), n_strata):
        members = sorted(
            ((entropy(by_volume[i]), by_volume[i].account_id) for i in stratum),
        )
        k = int(np.floor(len(members) / 5 + 0.5))
        picked = members[:k] if quintile == "top" else members[len(members) - k:]
        chosen.update(acct for _h, acct in picked)
    return chosen
