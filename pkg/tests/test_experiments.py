from collections import Counter

import numpy as np
import pytest
from conftest import make_seq
from hypothesis import given
from hypothesis import strategies as st

from shopentropy.entropy import random_entropy, true_entropy, uncorrelated_entropy
from shopentropy.errors import ConfigError, EmptyGroup, NoSharedAccounts, WindowTooShort
from shopentropy.experiments import (
    SimulationConfig,
    bootstrap_mean_ci,
    bootstrap_median_diff,
    bundling_score,
    cohort_summary,
    overlap_monte_carlo,
    overlap_probability,
    overlap_report,
    pair_overlap,
    run_entropy_simulation,
    run_seed,
    sample_accounts,
    shuffle_within_day,
    sort_within_week,
    top_merchant,
    top_merchant_profile,
    visits_per_store_variance,
    window_stability,
)
from shopentropy.ingest import Dataset

events = st.lists(st.tuples(st.sampled_from("ABCDEF"), st.integers(0, 20)), min_size=1, max_size=50)


def seq_from(pairs, account_id="acct"):
    pairs = sorted(pairs, key=lambda p: p[1])
    return make_seq([m for m, _ in pairs], days=[d for _, d in pairs], account_id=account_id)


def dataset(seqs):
    seqs = list(seqs)
    return Dataset({s.account_id: s for s in seqs}, {s.account_id: 0.0 for s in seqs}, seqs[0].window)


def day_pairs(seq):
    return Counter(zip(seq.days(), seq.symbols()))


def week_pairs(seq):
    return Counter(((d - seq.window.start).days // 7, m) for d, m in zip(seq.days(), seq.symbols()))


class TestShuffle:
    def test_distinct_days_unchanged(self):
        seq = make_seq(list("ABCA"))
        assert shuffle_within_day(seq, 123) == seq

    def test_two_events_each_order_half_the_time(self):
        seq = make_seq(["A", "B"], days=[0, 0])
        firsts = Counter(shuffle_within_day(seq, s).symbols()[0] for s in range(4000))
        assert set(firsts) == {"A", "B"}
        assert abs(firsts["A"] / 4000 - 0.5) < 0.03

    def test_timestamps_keep_their_slots(self):
        seq = make_seq(list("ABCD"), days=[0, 0, 0, 1])
        out = shuffle_within_day(seq, 9)
        assert [e.timestamp for e in out.events] == [e.timestamp for e in seq.events]

    @given(events, st.integers(0, 2**64 - 1))
    def test_preserves_day_multiset_and_counts(self, pairs, seed):
        seq = seq_from(pairs)
        out = shuffle_within_day(seq, seed)
        assert day_pairs(out) == day_pairs(seq)
        assert random_entropy(out) == random_entropy(seq)
        assert uncorrelated_entropy(out) == uncorrelated_entropy(seq)

    def test_seeded(self):
        seq = seq_from([(m, k // 4) for k, m in enumerate("ABCDEFABCDEFABCD")])
        assert shuffle_within_day(seq, 5) == shuffle_within_day(seq, 5)


class TestSort:
    def test_week_sorted(self):
        seq = make_seq(list("CABA"), days=[0, 1, 2, 3])
        assert sort_within_week(seq).symbols() == list("AABC")

    def test_sorted_week_unchanged(self):
        seq = make_seq(list("AABC"), days=[0, 1, 2, 3])
        assert sort_within_week(seq) == seq

    def test_weeks_anchor_at_window_start(self):
        seq = make_seq(list("BA" "BA"), days=[5, 6, 7, 8])
        assert sort_within_week(seq).symbols() == list("ABAB")

    @given(events)
    def test_idempotent_and_week_multiset(self, pairs):
        seq = seq_from(pairs)
        once = sort_within_week(seq)
        assert sort_within_week(once) == once
        assert week_pairs(once) == week_pairs(seq)


def routine_like(n_accounts=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_accounts):
        n = int(rng.integers(20, 60))
        days = sorted(rng.integers(0, 28, n).tolist())
        out.append(make_seq(rng.choice(list("ABCDEFG"), n).tolist(), days=days, account_id=f"a{k:02d}"))
    return dataset(out)


class TestSimulation:
    def test_single_event_days_make_shuffle_identity(self):
        ds = dataset([make_seq(list("ABCAB" * 2), account_id=f"a{k}", window_days=28) for k in range(3)])
        one = run_entropy_simulation(ds, SimulationConfig(runs=1, sample_size=3))
        many = run_entropy_simulation(ds, SimulationConfig(runs=10_000, sample_size=3))
        assert np.array_equal(one.transformed(), many.transformed())
        assert np.array_equal(one.deltas(), np.zeros(3))

    def test_runs_are_reproducible_one_by_one(self):
        ds = routine_like(2)
        cfg = SimulationConfig(runs=25, sample_size=2, seed=11)
        res = run_entropy_simulation(ds, cfg)
        for acc in res.per_account:
            seq = ds.sequences[acc.account_id]
            values = [true_entropy(shuffle_within_day(seq, run_seed(11, acc.account_id, r))) for r in range(25)]
            assert acc.transformed_mean == pytest.approx(np.mean(values), rel=1e-12)
            assert acc.transformed_sd == pytest.approx(np.std(values), rel=1e-9, abs=1e-12)

    def test_threads_and_determinism(self):
        ds = routine_like()
        cfg = SimulationConfig(runs=50, sample_size=8, seed=3)
        a = run_entropy_simulation(ds, cfg, threads=1).to_json()
        assert a == run_entropy_simulation(ds, cfg, threads=4).to_json()

    def test_sort_week(self):
        ds = routine_like()
        cfg = SimulationConfig(runs=1, sample_size=12, mode="sort_week")
        res = run_entropy_simulation(ds, cfg)
        assert res.to_json() == run_entropy_simulation(ds, cfg).to_json()
        assert res.transformed().mean() < res.baseline().mean()

    def test_sampling(self):
        ds = routine_like()
        assert sample_accounts(ds, 5, 1) == sample_accounts(ds, 5, 1)
        with pytest.raises(ConfigError):
            sample_accounts(ds, 13, 1)

    @pytest.mark.parametrize("kw", [{"runs": 0}, {"sample_size": 0}, {"mode": "reverse"}, {"seed": -1}])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            SimulationConfig(**kw)


class TestBundling:
    def test_one_busy_day(self):
        seq = make_seq(["A"] * 7, days=[0] * 7, window_days=7)
        b = bundling_score(seq)
        assert (b.mean_daily, b.variance) == (1.0, 6.0)

    def test_uniform_days(self):
        assert bundling_score(make_seq(["A"] * 7, window_days=7)).variance == 0.0

    def test_short_window(self):
        with pytest.raises(WindowTooShort):
            bundling_score(make_seq(["A"], window_days=1))

    @given(st.lists(st.integers(0, 6), min_size=1, max_size=30), st.permutations(range(7)))
    def test_invariant_under_day_permutation(self, days, perm):
        a = make_seq(["A"] * len(days), days=sorted(days), window_days=7)
        moved = sorted(perm[d] for d in days)
        b = make_seq(["A"] * len(days), days=moved, window_days=7)
        assert bundling_score(a).variance == bundling_score(b).variance

    @pytest.mark.parametrize("before,after", [([0, 1, 2], [0, 0, 2]), ([0, 0, 1, 2], [0, 0, 0, 2]),
                                              ([0, 1, 1, 2], [0, 1, 1, 1])])
    def test_merging_days_raises_variance(self, before, after):
        a = make_seq(["A"] * len(before), days=before, window_days=3)
        b = make_seq(["A"] * len(after), days=after, window_days=3)
        assert bundling_score(b).variance > bundling_score(a).variance


class TestCohorts:
    def test_visits_per_store_variance(self):
        assert visits_per_store_variance(make_seq(list("AAAABC"))) == 2.0

    def test_identical_accounts_degenerate(self):
        ds = dataset([make_seq(list("AAB"), account_id=f"a{k}") for k in range(4)])
        summary = cohort_summary(ds, {"c": ds.accounts})["c"]
        for h in summary.histograms().values():
            assert len(h.counts) == 1 and h.total == 4

    def test_empty_cohort(self):
        ds = dataset([make_seq(list("AB"))])
        with pytest.raises(EmptyGroup):
            cohort_summary(ds, {"c": []})


def mcc_seq(account_id, mccs):
    return make_seq([f"{account_id}-{m}" for m in mccs], mccs=list(mccs), account_id=account_id)


class TestOverlap:
    def test_identical_single_mcc(self):
        ds = dataset([mcc_seq("x", ["5411"] * 3), mcc_seq("y", ["5411"] * 5)])
        assert overlap_probability(ds, ["x", "y"]).within_group_prob == 1.0

    def test_disjoint(self):
        ds = dataset([mcc_seq("x", ["5411"]), mcc_seq("y", ["5541"])])
        assert overlap_probability(ds, ["x"], ["y"]).cross_group_prob == 0.0

    def test_uniform_over_four(self):
        codes = ["5411", "5541", "5812", "5999"]
        ds = dataset([mcc_seq("x", codes), mcc_seq("y", codes[::-1])])
        assert overlap_probability(ds, ["x", "y"]).within_group_prob == pytest.approx(0.25)
        assert pair_overlap({m: 0.25 for m in codes}, {m: 0.25 for m in codes}) == 0.25

    def test_closed_form_is_pair_mean(self):
        rng = np.random.default_rng(0)
        codes = ["5411", "5541", "5812"]
        seqs = [mcc_seq(f"a{k}", rng.choice(codes, int(rng.integers(1, 15))).tolist()) for k in range(6)]
        ds = dataset(seqs)
        probs = {s.account_id: s.visit_distribution("mcc").probabilities() for s in seqs}
        a, b = ["a0", "a1", "a2"], ["a2", "a3", "a4", "a5"]
        res = overlap_probability(ds, a, b)
        within = np.mean([pair_overlap(probs[x], probs[y]) for i, x in enumerate(a) for y in a[i + 1:]])
        cross = np.mean([pair_overlap(probs[x], probs[y]) for x in a for y in b if x != y])
        assert res.within_group_prob == pytest.approx(within, abs=1e-12)
        assert res.cross_group_prob == pytest.approx(cross, abs=1e-12)
        assert res.n_pairs_cross == 11

    def test_monte_carlo_agrees(self):
        rng = np.random.default_rng(1)
        codes = ["5411", "5541", "5812", "5999"]
        seqs = [mcc_seq(f"a{k}", rng.choice(codes, int(rng.integers(1, 12)), p=[0.4, 0.3, 0.2, 0.1]).tolist())
                for k in range(10)]
        ds = dataset(seqs)
        exact = overlap_probability(ds, ds.accounts[:5], ds.accounts[5:])
        mc = overlap_monte_carlo(ds, ds.accounts[:5], ds.accounts[5:], samples=200_000, seed=2)
        assert mc.within_group_prob == pytest.approx(exact.within_group_prob, abs=0.01)
        assert mc.cross_group_prob == pytest.approx(exact.cross_group_prob, abs=0.01)

    def test_report_and_errors(self):
        ds = dataset([mcc_seq("x", ["5411"]), mcc_seq("y", ["5411"]), mcc_seq("z", ["5411"]), mcc_seq("w", ["5411"])])
        rep = overlap_report(ds, ["x", "y"], ["z", "w"])
        assert [rep[k] for k in ("within_top", "within_bottom", "pooled_within", "cross")] == [1.0] * 4
        with pytest.raises(EmptyGroup):
            overlap_probability(ds, [])


class TestTopMerchant:
    def test_argmax(self):
        seq = make_seq(["m1"] * 9 + ["m2"] * 3, mccs=["5411"] * 9 + ["5541"] * 3)
        assert top_merchant(seq) == ("m1", "5411")

    def test_tie_goes_to_smaller_id(self):
        seq = make_seq(["zz", "aa", "zz", "aa"], mccs=["5541", "5411", "5541", "5411"])
        assert top_merchant(seq) == ("aa", "5411")

    def test_profile_shares(self):
        ds = dataset([mcc_seq("x", ["5411"]), mcc_seq("y", ["5411"]), mcc_seq("z", ["5541"])])
        prof = top_merchant_profile(ds, ds.accounts)
        assert prof[0] == ("5411", pytest.approx(2 / 3))
        assert sum(s for _m, s in prof) == pytest.approx(1.0)
        with pytest.raises(EmptyGroup):
            top_merchant_profile(ds, [])


class TestStability:
    def test_identical_windows(self):
        ds = routine_like()
        res = window_stability(ds, ds)
        assert res.rank_corr_unc == 1.0 and res.rank_corr_true == 1.0
        assert not res.delta_unc.any() and not res.delta_true.any()

    def test_disjoint(self):
        a = dataset([make_seq(list("AB"), account_id="x")])
        b = dataset([make_seq(list("AB"), account_id="y")])
        with pytest.raises(NoSharedAccounts):
            window_stability(a, b)


def test_bootstrap_helpers():
    mean, (lo, hi) = bootstrap_mean_ci(np.arange(100.0), n_boot=2000, seed=0)
    assert mean == 49.5 and lo < 49.5 < hi
    diff, lo, hi = bootstrap_median_diff(np.arange(100.0) + 50, np.arange(100.0), n_boot=2000, seed=0)
    assert diff == 50.0 and 0 < lo < 50 < hi
