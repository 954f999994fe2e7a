"""Random, temporal-uncorrelated and true (Lempel-Ziv) entropy of visit sequences.

The true-entropy estimator is

    S_est = n log2(n) / sum_i Lambda_i

where ``Lambda_i`` is the length of the shortest substring starting at
position ``i`` that does not occur entirely inside the prefix ``s[:i]``.
When the whole suffix ``s[i:]`` already occurs in the prefix, no novel
substring exists and ``Lambda_i`` is taken as ``n - i + 1`` (0-based ``i``),
i.e. one past the suffix length. Both cases reduce to ``Lambda_i = L_i + 1``
with ``L_i`` the longest prefix of ``s[i:]`` found inside ``s[:i]``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from .errors import EmptyGroup, EmptySequence, InfeasibleEntropy, SequenceTooShort
from .model import EntropyReport, EventSequence

MEASURES = ("s_rand", "s_unc", "s_true")


def encode_symbols(symbols: Sequence) -> np.ndarray:
    """Map symbols to int32 codes in order of first appearance."""
    index: dict = {}
    return np.fromiter((index.setdefault(s, len(index)) for s in symbols), dtype=np.int32, count=len(symbols))


@numba.njit(cache=True, nogil=True, boundscheck=False)
def longest_prior_match(codes):
    """L[i] = length of the longest prefix of codes[i:] occurring inside codes[:i].

    O(n^2) scan over all diagonals ``d = i - j``: ``runs[d]`` holds the length
    of the run of equal symbols starting at (i - d, i); the occurrence must end
    before ``i``, so each diagonal contributes ``min(runs[d], d)``.
    """
    n = codes.shape[0]
    best = np.zeros(n, np.int32)
    if n < 2:
        return best
    rev = codes[::-1].copy()  # rev[n - 1 - k] == codes[k]
    runs = np.zeros(n, np.int32)
    offs = np.arange(n).astype(np.int32)
    for i in range(n - 1, 0, -1):
        c = codes[i]
        base = n - 1 - i  # codes[i - d] == rev[base + d]
        m = np.int32(0)
        for d in range(1, i + 1):
            x = (runs[d] + np.int32(1)) * np.int32(rev[base + d] == c)
            runs[d] = x
            m = max(m, min(x, offs[d]))
        best[i] = m
    return best


@numba.njit(cache=True, nogil=True)
def lz_estimate_codes(codes):
    n = codes.shape[0]
    best = longest_prior_match(codes)
    total = 0
    for i in range(n):
        total += best[i] + 1
    return n * math.log2(n) / total


def novel_substring_lengths(symbols: Sequence) -> np.ndarray:
    """Lambda_i for every position (see module docstring)."""
    codes = encode_symbols(symbols)
    return longest_prior_match(codes).astype(np.int64) + 1


def lz_entropy(symbols: Sequence) -> float:
    """Lempel-Ziv entropy-rate estimate in bits/symbol of an arbitrary symbol sequence."""
    if len(symbols) < 2:
        raise SequenceTooShort(f"true entropy needs at least 2 events, got {len(symbols)}")
    return float(lz_estimate_codes(encode_symbols(symbols)))


def _require_events(seq: EventSequence) -> None:
    if seq.n_events == 0:
        raise EmptySequence(f"account {seq.account_id!r} has no events")


def random_entropy(seq: EventSequence, level: str = "merchant") -> float:
    """log2 of the number of distinct locations visited."""
    _require_events(seq)
    return math.log2(len(set(seq.symbols(level))))


def shannon_entropy(counts: Iterable[int]) -> float:
    counts = [c for c in counts if c > 0]
    total = sum(counts)
    h = 0.0
    for c in counts:
        p = c / total
        h -= p * math.log2(p)
    # rounding can leave -0.0 or a hair above log2(N)
    return min(max(h, 0.0), math.log2(len(counts))) if counts else 0.0


def uncorrelated_entropy(seq: EventSequence, level: str = "merchant") -> float:
    """Shannon entropy of the visit-frequency distribution, -sum p log2 p."""
    _require_events(seq)
    counts = Counter(seq.symbols(level))
    # sorted so the float sum does not depend on event order
    return shannon_entropy(sorted(counts.values()))


def true_entropy(seq: EventSequence, level: str = "merchant") -> float:
    if seq.n_events < 2:
        raise SequenceTooShort(
            f"account {seq.account_id!r}: true entropy needs at least 2 events, got {seq.n_events}"
        )
    return lz_entropy(seq.symbols(level))


def entropy_report(seq: EventSequence, level: str = "merchant") -> EntropyReport:
    s_true = true_entropy(seq, level)
    n_merchants = len(set(seq.symbols(level)))
    return EntropyReport(
        account_id=seq.account_id,
        s_rand=random_entropy(seq, level),
        s_unc=uncorrelated_entropy(seq, level),
        s_true=s_true,
        n_events=seq.n_events,
        n_merchants=n_merchants,
    )


def population_reports(
    sequences: Iterable[EventSequence], level: str = "merchant", threads: int | None = None
) -> list[EntropyReport]:
    """Reports for many sequences, returned in input order regardless of `threads`."""
    seqs = list(sequences)
    if threads is not None and threads > 1 and len(seqs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: entropy_report(s, level), seqs))
    return [entropy_report(s, level) for s in seqs]


@dataclass(frozen=True)
class Histogram:
    measure: str
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self) -> list[tuple[float, float, int, str]]:
        return [
            (float(self.edges[k]), float(self.edges[k + 1]), int(self.counts[k]), self.measure)
            for k in range(len(self.counts))
        ]


def histogram(values: Sequence[float], bin_width: float, measure: str = "") -> Histogram:
    """Fixed-width histogram aligned to multiples of `bin_width`.

    Bins are half-open [lo, hi); the span covers every value, so a single
    value (or a constant population) yields one bin.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return Histogram(measure, np.array([0.0, bin_width]), np.zeros(1, dtype=np.int64))
    idx = np.floor(vals / bin_width + 1e-9).astype(np.int64)
    lo, hi = int(idx.min()), int(idx.max())
    counts = np.bincount(idx - lo, minlength=hi - lo + 1).astype(np.int64)
    edges = np.arange(lo, hi + 2, dtype=float) * bin_width
    return Histogram(measure, edges, counts)


@dataclass
class EntropyDistribution:
    reports: list[EntropyReport]
    histograms: dict[str, Histogram]
    too_few_events: list[str] = field(default_factory=list)

    def means(self) -> dict[str, float]:
        return {m: float(np.mean([getattr(r, m) for r in self.reports])) for m in MEASURES}


def entropy_distribution(
    sequences: Iterable[EventSequence],
    bin_width: float = 0.25,
    level: str = "merchant",
    threads: int | None = None,
) -> EntropyDistribution:
    """Per-measure histograms over a population of sequences.

    Accounts with fewer than two events are listed in ``too_few_events``
    instead of being dropped silently.
    """
    seqs = sorted(sequences, key=lambda s: s.account_id)
    if not seqs:
        raise EmptyGroup("entropy distribution of an empty account set")
    usable = [s for s in seqs if s.n_events >= 2]
    too_few = [s.account_id for s in seqs if s.n_events < 2]
    reports = population_reports(usable, level, threads)
    hists = {m: histogram([getattr(r, m) for r in reports], bin_width, m) for m in MEASURES}
    return EntropyDistribution(reports, hists, too_few)


def histograms_to_csv(hists: Iterable[Histogram]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_lo", "bin_hi", "count", "measure"])
    for h in hists:
        for lo, hi, count, measure in h.rows():
            writer.writerow([f"{lo:.6f}", f"{hi:.6f}", count, measure])
    return buf.getvalue()


def reports_to_json(reports: Iterable[EntropyReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2) + "\n"


def _fano_rhs(p: float, n: int) -> float:
    h = 0.0
    for q in (p, 1.0 - p):
        if q > 0:
            h -= q * math.log2(q)
    return h + (1.0 - p) * math.log2(n - 1)


def max_predictability(s_true: float, n_merchants: int, tol: float = 1e-9) -> float:
    """Upper bound on prediction accuracy from Fano's inequality (extension).

    Solves ``S = H(P) + (1 - P) log2(N - 1)`` for ``P`` in ``[1/N, 1]`` by
    bisection; the right-hand side decreases monotonically on that interval.
    """
    if n_merchants < 2:
        raise InfeasibleEntropy("max predictability needs at least 2 merchants")
    s_max = math.log2(n_merchants)
    if not 0.0 <= s_true <= s_max + 1e-12:
        raise InfeasibleEntropy(f"entropy {s_true} outside [0, log2({n_merchants})]")
    lo, hi = 1.0 / n_merchants, 1.0
    if s_true <= 0.0:
        return 1.0
    if s_true >= s_max:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _fano_rhs(mid, n_merchants) > s_true:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
