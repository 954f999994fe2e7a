import math

import numpy as np
import pytest
from conftest import make_seq
from hypothesis import given
from hypothesis import strategies as st

from shopentropy.entropy import (
    entropy_distribution,
    entropy_report,
    histogram,
    histograms_to_csv,
    lz_entropy,
    max_predictability,
    novel_substring_lengths,
    population_reports,
    random_entropy,
    true_entropy,
    uncorrelated_entropy,
)
from shopentropy.errors import EmptyGroup, EmptySequence, InfeasibleEntropy, SequenceTooShort

seqs = st.lists(st.sampled_from("abcde"), min_size=2, max_size=60)


def _occurs_in(sub, prefix):
    k = len(sub)
    return any(prefix[j:j + k] == sub for j in range(len(prefix) - k + 1))


def brute_lambda(s):
    """Shortest substring starting at i absent from s[:i]; n - i + 1 if none exists."""
    n = len(s)
    out = []
    for i in range(n):
        for k in range(1, n - i + 1):
            if not _occurs_in(s[i:i + k], s[:i]):
                out.append(k)
                break
        else:
            out.append(n - i + 1)
    return out


def brute_lz(s):
    n = len(s)
    return n * math.log2(n) / sum(brute_lambda(s))


class TestLempelZiv:
    def test_hand_worked(self):
        # A B A B A: Lambda = 1, 1, 3, 3, 2 (matches must end before position i)
        assert list(novel_substring_lengths("ABABA")) == [1, 1, 3, 3, 2]
        assert lz_entropy("ABABA") == pytest.approx(5 * math.log2(5) / 10)

    @given(seqs)
    def test_matches_definition_exactly(self, s):
        assert list(novel_substring_lengths(s)) == brute_lambda(s)
        assert lz_entropy(s) == brute_lz(s)

    def test_symbol_labels_do_not_matter(self):
        assert lz_entropy(list("abcabd")) == lz_entropy([7, 1, 3, 7, 1, 0])

    def test_constant_sequence_tends_to_zero(self):
        values = [lz_entropy("a" * n) for n in (10, 100, 1000, 2000)]
        assert values == sorted(values, reverse=True)
        assert values[-1] < 0.025

    def test_too_short(self):
        with pytest.raises(SequenceTooShort):
            lz_entropy("a")

    def test_iid_uniform_estimate(self):
        rng = np.random.default_rng(3)
        est = lz_entropy(rng.integers(0, 4, 20_000).tolist())
        assert est == pytest.approx(2.0, rel=0.15)


class TestSimpleEntropies:
    def test_random_entropy(self):
        assert random_entropy(make_seq(list("abcdefgh"))) == 3.0
        assert random_entropy(make_seq(["a"] * 50, days=[k % 28 for k in range(50)])) == 0.0
        assert random_entropy(make_seq(list("abcde"))) == pytest.approx(2.321928, abs=1e-6)

    def test_uncorrelated_entropy(self):
        assert uncorrelated_entropy(make_seq(list("abcd" * 3))) == 2.0
        assert uncorrelated_entropy(make_seq(list("aabc"))) == 1.5
        assert uncorrelated_entropy(make_seq(["a"] * 5)) == 0.0

    def test_empty(self):
        with pytest.raises(EmptySequence):
            random_entropy(make_seq([]))
        with pytest.raises(EmptySequence):
            uncorrelated_entropy(make_seq([]))
        with pytest.raises(SequenceTooShort):
            true_entropy(make_seq(["a"]))

    def test_single_merchant_report(self):
        r = entropy_report(make_seq(["m"] * 10))
        assert (r.s_rand, r.s_unc) == (0.0, 0.0)
        # finite-length bias; the estimate only vanishes as n grows
        assert r.s_true == pytest.approx(10 * math.log2(10) / 35)

    @given(st.lists(st.sampled_from("abcdefghij"), min_size=2, max_size=80))
    def test_ordering_of_measures(self, s):
        r = entropy_report(make_seq(s, days=[k % 28 for k in range(len(s))]))
        assert 0.0 <= r.s_unc <= r.s_rand
        assert r.s_rand == math.log2(r.n_merchants)

    def test_mcc_level(self):
        seq = make_seq(list("abc"), mccs=["5411", "5411", "5812"])
        assert random_entropy(seq, "mcc") == 1.0


class TestDistribution:
    def test_single_account_single_bins(self):
        dist = entropy_distribution([make_seq(list("abcabc"))], bin_width=0.25)
        for h in dist.histograms.values():
            assert h.total == 1 and len(h.counts) == 1

    def test_constant_shoppers_all_at_zero(self):
        seqs_ = [make_seq(["m"] * 1000, days=[k % 28 for k in range(1000)], account_id=f"a{k}") for k in range(5)]
        dist = entropy_distribution(seqs_, bin_width=0.5)
        for m in ("s_rand", "s_unc", "s_true"):
            h = dist.histograms[m]
            assert h.edges[0] == 0.0 and h.counts[0] == 5

    def test_too_few_events_listed(self):
        dist = entropy_distribution([make_seq(["a"], account_id="x"), make_seq(list("ab"), account_id="y")])
        assert dist.too_few_events == ["x"]
        assert [r.account_id for r in dist.reports] == ["y"]

    def test_empty_population(self):
        with pytest.raises(EmptyGroup):
            entropy_distribution([])

    def test_csv_layout(self):
        text = histograms_to_csv([histogram([0.1, 0.3, 0.35], 0.25, "s_unc")])
        assert text == "bin_lo,bin_hi,count,measure\n0.000000,0.250000,1,s_unc\n0.250000,0.500000,2,s_unc\n"

    def test_threads_do_not_change_results(self):
        rng = np.random.default_rng(0)
        population = [make_seq(list(rng.choice(list("abcdef"), 40)), days=[k % 28 for k in range(40)],
                               account_id=f"a{k}") for k in range(12)]
        assert population_reports(population, threads=4) == population_reports(population, threads=1)


class TestMaxPredictability:
    def test_limits(self):
        assert max_predictability(0.0, 5) == 1.0
        assert max_predictability(math.log2(5), 5) == pytest.approx(0.2)

    @given(st.floats(0.01, 0.99), st.integers(2, 200))
    def test_inverts_fano(self, p_true, n):
        p_true = max(p_true, 1.0 / n + 1e-3)
        h = -p_true * math.log2(p_true) - (1 - p_true) * math.log2(1 - p_true) + (1 - p_true) * math.log2(n - 1)
        if h <= math.log2(n):
            assert max_predictability(h, n) == pytest.approx(p_true, abs=1e-7)

    def test_infeasible(self):
        with pytest.raises(InfeasibleEntropy):
            max_predictability(3.0, 4)
        with pytest.raises(InfeasibleEntropy):
            max_predictability(0.5, 1)
