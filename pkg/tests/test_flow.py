import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import entropy as scipy_kl

from polarscope.flow import (ConsumptionProfile, RetweetEvent, build_transitions, consumption_profiles,
                             count_transitions, country_baseline, entropy_report, mobility_indices,
                             ratio_histogram, relative_entropy, retweet_ratio, user_sequences,
                             write_entropy_csv, write_histogram_csv, write_transition_csv)
from polarscope.synth import MarkovUserSpec, gen_markov_users

prob = st.floats(0.0, 1.0)
inner = st.floats(1e-6, 1 - 1e-6)


def ev(user, media, ts, stance=None, tid=""):
    return RetweetEvent(user, media, ts, tid, stance)


class TestRatio:
    def test_eight_two(self):
        events = [ev(f"u{i}", "m", i, "pro") for i in range(8)] + [ev("a", "m", 0, "anti")] * 2
        assert retweet_ratio("m", events).p_pro == 0.8

    def test_unlabeled_only(self):
        assert retweet_ratio("m", [ev("u", "m", 0, None), ev("v", "m", 0, "other")]) is None

    def test_all_pro(self):
        assert retweet_ratio("m", [ev("u", "m", 0, "pro")]).p_pro == 1.0

    def test_profiles_exclusion_count(self):
        profs, excluded = consumption_profiles([ev("u", "a", 0, "pro"), ev("u", "b", 0, None)])
        assert [p.media_id for p in profs] == ["a"] and excluded == 1


class TestEntropy:
    def test_identity(self):
        assert relative_entropy(0.42, 0.42) == 0.0

    def test_value(self):
        assert relative_entropy(0.9, 0.5) == pytest.approx(-0.3681, abs=1e-4)

    def test_extreme(self):
        assert relative_entropy(1.0, 0.5) == pytest.approx(-math.log(2))
        assert relative_entropy(0.0, 0.25) == pytest.approx(math.log(0.75))

    @pytest.mark.parametrize("g", [0.0, 1.0, -0.1])
    def test_degenerate_baseline(self, g):
        with pytest.raises(ValueError):
            relative_entropy(0.5, g)

    @given(prob, inner)
    def test_kl_oracle(self, p, g):
        assert relative_entropy(p, g) == pytest.approx(-scipy_kl([p, 1 - p], [g, 1 - g]), abs=1e-12)

    @given(prob, inner)
    def test_nonpositive(self, p, g):
        h = relative_entropy(p, g)
        assert h <= 0.0
        if abs(p - g) > 1e-4:
            assert h < 0.0

    def test_baseline(self):
        st_ = {"a": "pro", "b": "anti", "c": "anti", "d": "other"}
        assert country_baseline(st_) == pytest.approx(1 / 3)
        assert country_baseline(st_, ["a", "b", "zz"]) == 0.5
        with pytest.raises(ValueError):
            country_baseline({"d": "other"})

    def test_report(self):
        rep = entropy_report([ConsumptionProfile("m", 9, 1)], 0.5)
        assert rep.entropy["m"] == pytest.approx(relative_entropy(0.9, 0.5))


class TestTransitions:
    def test_hand_counted(self):
        events = [ev("u", "m0" if s == 0 else "m1", t) for t, s in enumerate([0, 0, 1, 1, 0])]
        tm = build_transitions(events, {"m0": 0, "m1": 1})
        assert tm.counts.tolist() == [[1, 1], [1, 1]]
        np.testing.assert_array_equal(tm.P, [[0.5, 0.5], [0.5, 0.5]])

    def test_undefined_row(self):
        tm = build_transitions([ev("u", "m0", t) for t in range(4)], {"m0": 0, "m1": 1})
        np.testing.assert_array_equal(tm.P[0], [1.0, 0.0])
        assert tm.undefined_rows == [1] and np.isnan(tm.P[1]).all()
        with pytest.raises(ValueError, match="undefined"):
            mobility_indices(tm)

    def test_no_chain_across_users(self):
        events = [ev("a", "m0", 0), ev("a", "m0", 1), ev("b", "m1", 2), ev("b", "m1", 3)]
        tm = build_transitions(events, {"m0": 0, "m1": 1})
        assert tm.counts.tolist() == [[1, 0], [0, 1]]

    def test_time_order_not_input_order(self):
        events = [ev("a", "m1", 5), ev("a", "m0", 1)]
        assert build_transitions(events, {"m0": 0, "m1": 1}).counts.tolist() == [[0, 1], [0, 0]]

    def test_tweet_id_tiebreak(self):
        events = [ev("a", "m1", 1, tid="b"), ev("a", "m0", 1, tid="a")]
        assert user_sequences(events, {"m0": 0, "m1": 1}) == {"a": [0, 1]}

    def test_unclustered_dropped(self):
        assert user_sequences([ev("a", "zz", 0), ev("a", "m0", 1)], {"m0": 0}) == {"a": [0]}

    def test_no_pairs(self):
        with pytest.raises(ValueError):
            build_transitions([ev("a", "m0", 0), ev("b", "m0", 0)], {"m0": 0})

    @given(st.lists(st.lists(st.integers(0, 2), max_size=12), min_size=1, max_size=20))
    def test_counts_total_and_loop_oracle(self, seqs):
        counts = count_transitions(seqs, 3)
        assert counts.sum() == sum(max(0, len(s) - 1) for s in seqs)
        ref = np.zeros((3, 3), dtype=int)
        for s in seqs:
            for a, b in zip(s, s[1:]):
                ref[a, b] += 1
        np.testing.assert_array_equal(counts, ref)

    def test_markov_convergence(self):
        P = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
        mu = gen_markov_users(MarkovUserSpec(P=P, n_users=10_000, chain_length=20), 0)
        tm = build_transitions(mu.events, mu.cluster_of)
        assert np.abs(tm.P - P).max() < 0.02


class TestMobility:
    # transition matrices and indices of the four countries, in percent
    TABLE = {
        "bolivia": ([[94.15, 5.85], [2.79, 97.21]], (95.68, 2.93, 1.40)),
        "chile": ([[66.68, 33.32], [21.2, 78.8]], (72.74, 16.66, 10.6)),
        "colombia": ([[91.75, 8.25], [17.96, 82.04]], (86.90, 4.13, 8.98)),
        "ecuador": ([[83.27, 16.73], [7.85, 92.15]], (87.72, 8.37, 3.93)),
    }

    @pytest.mark.parametrize("country", sorted(TABLE))
    def test_reported_rows(self, country):
        P, expect = self.TABLE[country]
        m = mobility_indices(np.array(P) / 100)
        assert np.allclose([100 * m.IR, 100 * m.ML, 100 * m.MR], expect, atol=0.02)

    def test_identity(self):
        m = mobility_indices(np.eye(3))
        assert (m.IR, m.ML, m.MR) == (1.0, 0.0, 0.0)

    def test_direction(self):
        m = mobility_indices([[0.0, 1.0], [0.0, 1.0]])
        assert m.ML == 0.5 and m.MR == 0.0

    def test_not_square(self):
        with pytest.raises(ValueError):
            mobility_indices(np.ones((2, 3)))

    @given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
    def test_sum_to_one(self, n, seed):
        P = np.random.default_rng(seed).dirichlet(np.ones(n), size=n)
        m = mobility_indices(P)
        assert abs(m.IR + m.ML + m.MR - 1.0) < 1e-9


class TestHistogram:
    def test_two_bins(self):
        assert ratio_histogram([0.0, 1.0], 2)[0].tolist() == [1, 1]

    def test_empty(self):
        assert ratio_histogram([], 4)[0].tolist() == [0, 0, 0, 0]

    def test_half_open(self):
        assert ratio_histogram([0.5], 2)[0].tolist() == [0, 1]

    def test_profiles_accepted(self):
        assert ratio_histogram([ConsumptionProfile("m", 1, 3)], 4)[0].tolist() == [0, 1, 0, 0]

    @given(st.lists(prob, max_size=50), st.integers(1, 20))
    def test_total(self, vals, bins):
        assert ratio_histogram(vals, bins)[0].sum() == len(vals)


def test_writers(tmp_path):
    rep = entropy_report([ConsumptionProfile("m", 3, 1)], 0.5)
    write_entropy_csv(tmp_path / "e.csv", rep, "prov")
    tm = build_transitions([ev("u", "a", 0), ev("u", "b", 1)], {"a": 0, "b": 1})
    write_transition_csv(tmp_path / "t.csv", tm, "prov")
    write_histogram_csv(tmp_path / "h.csv", *ratio_histogram([0.2], 2), "prov")
    t = (tmp_path / "t.csv").read_text().splitlines()
    assert t[0] == "# prov" and t[1].startswith("from,to_0,to_1")
    assert t[3].split(",")[1:3] == ["", ""]
