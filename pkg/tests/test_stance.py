import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from polarscope.corpus import TweetStore, make_tweet
from polarscope.stance import (Category, HashtagLexicon, PoliticianRegistry, Stance, StanceConfig,
                               combine_dimensions, label_tweet_by_hashtags, label_user, label_user_hashtag,
                               label_user_retweet, label_users, merge_methods, read_stance_csv,
                               stance_distribution, write_stance_csv)

LEX = HashtagLexicon({
    ("government", "evoesdemocracia"): "pro",
    ("government", "fueraevo"): "anti",
    ("protest", "boliviadicenoalfraude"): "pro",
    ("protest", "golpedeestado"): "anti",
})
REG = PoliticianRegistry({"gov1": Stance.PRO, "gov2": Stance.PRO, "opp1": Stance.ANTI})

_ids = itertools.count()


def tw(tags=(), user="u", rt=None):
    return make_tweet(id=str(next(_ids)), user_id=user, text="x", hashtags=list(tags), retweeted_user_id=rt)


def tweets(n_pro=0, n_anti=0, n_plain=0, n_mixed=0):
    return ([tw(["EvoEsDemocracia"]) for _ in range(n_pro)] + [tw(["FueraEvo"]) for _ in range(n_anti)]
            + [tw() for _ in range(n_plain)] + [tw(["evoesdemocracia", "fueraevo"]) for _ in range(n_mixed)])


def rts(n_pro=0, n_anti=0, n_other=0):
    return ([tw(rt="gov1") for _ in range(n_pro)] + [tw(rt="opp1") for _ in range(n_anti)]
            + [tw(rt="nobody") for _ in range(n_other)])


class TestTweetLabel:
    def test_pro(self):
        assert label_tweet_by_hashtags(tw(["evoesdemocracia"]), LEX, "government") is Stance.PRO

    def test_mixed_inconsistent(self):
        assert label_tweet_by_hashtags(tw(["evoesdemocracia", "fueraevo"]), LEX, "government") \
            is Stance.INCONSISTENT

    def test_empty(self):
        assert label_tweet_by_hashtags(tw(), LEX, "government") is Stance.NONE

    def test_other_dimension_ignored(self):
        assert label_tweet_by_hashtags(tw(["golpedeestado"]), LEX, "government") is Stance.NONE


class TestLexicon:
    def test_conflict_rejected(self):
        lex = HashtagLexicon()
        lex.add("government", "#A", "pro")
        with pytest.raises(ValueError):
            lex.add("government", "a", "anti")

    def test_unknown_dimension(self):
        with pytest.raises(ValueError):
            HashtagLexicon({("weather", "x"): "pro"})

    def test_csv(self, tmp_path):
        p = tmp_path / "lex.csv"
        p.write_text("dimension,hashtag,stance\ngovernment,#EvoSi,pro\nprotest,Paro,anti\n")
        lex = HashtagLexicon.read_csv(p)
        assert lex.get("government", "evosi") is Stance.PRO and lex.get("protest", "paro") is Stance.ANTI


class TestUserHashtag:
    def test_all_pro(self):
        assert label_user_hashtag(tweets(10), "", LEX, "government") == (Stance.PRO, 1.0)

    def test_inclusive_boundary(self):
        assert label_user_hashtag(tweets(19, 1), "", LEX, "government") == (Stance.PRO, 0.95)

    def test_below_threshold(self):
        s, p = label_user_hashtag(tweets(18, 2), "", LEX, "government")
        assert s is Stance.NONE and p == pytest.approx(0.9)

    def test_too_few_tweets(self):
        assert label_user_hashtag(tweets(9), "", LEX, "government")[0] is Stance.NONE

    def test_plain_tweets_ignored_in_stance_denominator(self):
        assert label_user_hashtag(tweets(10, n_plain=30), "", LEX, "government") == (Stance.PRO, 1.0)

    def test_all_denominator(self):
        s, p = label_user_hashtag(tweets(10, n_plain=30), "", LEX, "government", denominator="all")
        assert s is Stance.NONE and p == pytest.approx(0.25)

    def test_inconsistent_tweets_count_against(self):
        s, p = label_user_hashtag(tweets(19, n_mixed=1), "", LEX, "government")
        assert (s, p) == (Stance.PRO, 0.95)
        s, _ = label_user_hashtag(tweets(18, n_mixed=2), "", LEX, "government")
        assert s is Stance.NONE

    def test_description_one_observation(self):
        # 18 pro + 1 anti tweets is 18/19 < 0.95, the pro description makes it 19/20
        assert label_user_hashtag(tweets(18, 1), "", LEX, "government")[0] is Stance.NONE
        assert label_user_hashtag(tweets(18, 1), "Bolivia #EvoEsDemocracia", LEX, "government") \
            == (Stance.PRO, 0.95)

    def test_no_stance_tweets(self):
        assert label_user_hashtag(tweets(n_plain=12), "", LEX, "government") == (Stance.NONE, 0.0)

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            label_user_hashtag(tweets(10), "", LEX, "government", threshold=0.5)

    @given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 10),
           st.floats(0.51, 1.0), st.floats(0.51, 1.0))
    def test_threshold_monotone(self, n_pro, n_anti, n_plain, t1, t2):
        lo, hi = sorted((t1, t2))
        ts = tweets(n_pro, n_anti, n_plain)
        if label_user_hashtag(ts, "", LEX, "government", threshold=lo)[0] is Stance.NONE:
            assert label_user_hashtag(ts, "", LEX, "government", threshold=hi)[0] is Stance.NONE


class TestUserRetweet:
    def test_all_pro(self):
        assert label_user_retweet(rts(10), REG) == (Stance.PRO, 1.0)

    def test_inclusive_boundary(self):
        assert label_user_retweet(rts(9, 1), REG) == (Stance.PRO, 0.9)

    def test_below(self):
        assert label_user_retweet(rts(8, 2), REG)[0] is Stance.NONE

    def test_non_politicians_ignored(self):
        assert label_user_retweet(rts(9, 1, 50), REG) == (Stance.PRO, 0.9)

    def test_none(self):
        assert label_user_retweet(rts(n_other=5), REG) == (Stance.NONE, 0.0)


class TestCombine:
    @pytest.mark.parametrize("gov,protest,expected", [
        ("pro", "anti", Category.CONSISTENT_PRO),
        ("anti", "pro", Category.CONSISTENT_ANTI),
        ("pro", "pro", Category.INCONSISTENT),
        ("anti", "anti", Category.INCONSISTENT),
        ("none", "none", Category.OTHER),
        ("pro", "none", Category.CONSISTENT_PRO),
        ("anti", "none", Category.CONSISTENT_ANTI),
        ("none", "pro", Category.OTHER),
        ("none", "anti", Category.OTHER),
        ("inconsistent", "none", Category.INCONSISTENT),
    ])
    def test_table(self, gov, protest, expected):
        assert combine_dimensions(gov, protest) is expected

    @given(st.sampled_from(list(Stance)), st.sampled_from(list(Stance)))
    def test_never_consistent_when_signs_agree(self, a, b):
        if a is b and a in (Stance.PRO, Stance.ANTI):
            assert combine_dimensions(a, b) is Category.INCONSISTENT


class TestMerge:
    @pytest.mark.parametrize("h,r,expected", [
        ("pro", "pro", Stance.PRO), ("pro", "anti", Stance.INCONSISTENT), ("none", "anti", Stance.ANTI),
        ("anti", "none", Stance.ANTI), ("none", "none", Stance.NONE),
    ])
    def test_table(self, h, r, expected):
        assert merge_methods(h, r) is expected

    @given(st.sampled_from(list(Stance)), st.sampled_from(list(Stance)))
    def test_symmetric_and_idempotent(self, a, b):
        assert merge_methods(a, a) is a
        if Stance.NONE not in (a, b):
            assert merge_methods(a, b) is merge_methods(b, a)


class TestDistribution:
    def _records(self, counts):
        cats = [Category.CONSISTENT_ANTI, Category.CONSISTENT_PRO, Category.INCONSISTENT, Category.OTHER]
        recs = []
        for cat, n in zip(cats, counts):
            recs.extend(_rec(cat) for _ in range(n))
        return recs

    def test_table_split(self):
        d = stance_distribution(self._records((42, 37, 2, 19)))
        assert d == {"consistent_anti_government": 42.0, "consistent_pro_government": 37.0,
                     "inconsistent": 2.0, "other": 19.0}

    def test_single_category(self):
        d = stance_distribution(self._records((0, 5, 0, 0)))
        assert list(d.values()) == [0.0, 100.0, 0.0, 0.0]

    def test_one_each(self):
        assert set(stance_distribution(self._records((1, 1, 1, 1))).values()) == {25.0}

    def test_empty(self):
        with pytest.raises(ValueError):
            stance_distribution([])

    @given(st.lists(st.integers(0, 20), min_size=4, max_size=4).filter(lambda c: sum(c) > 0))
    def test_sums_to_100(self, counts):
        assert sum(stance_distribution(self._records(counts)).values()) == pytest.approx(100.0)


def _rec(cat):
    from polarscope.stance import UserStanceRecord
    return UserStanceRecord("u", Stance.NONE, 0.0, Stance.NONE, 0.0, cat)


class TestPlantedUsers:
    """Planted stances with at most 5% noise are recovered exactly."""

    @given(st.integers(20, 60), st.floats(0.0, 0.05), st.booleans(), st.randoms(use_true_random=False))
    def test_recovery(self, n, noise, pro, rnd):
        n_noise = int(noise * n)
        good, bad = ("EvoEsDemocracia", "FueraEvo") if pro else ("FueraEvo", "EvoEsDemocracia")
        ts = [tw([good]) for _ in range(n - n_noise)] + [tw([bad]) for _ in range(n_noise)]
        rnd.shuffle(ts)
        rec = label_user("u", ts, LEX, REG)
        assert rec.combined is (Category.CONSISTENT_PRO if pro else Category.CONSISTENT_ANTI)

    def test_merged_inconsistency_matches_hand_count(self):
        users = {}
        # hashtags pro, retweets anti -> inconsistent
        users["a"] = tweets(12) + rts(0, 10)
        users["b"] = tweets(0, 12) + rts(0, 10)
        users["c"] = tweets(12) + rts(10)
        users["d"] = tweets(0, 12) + rts(10)
        users["e"] = tweets(n_plain=12)
        store = TweetStore([make_tweet(id=f"{u}{i}", user_id=u, text="x", hashtags=t.hashtags,
                                       retweeted_user_id=t.retweeted_user_id)
                            for u, ts in users.items() for i, t in enumerate(ts)])
        recs = {r.user_id: r.combined for r in label_users(store, LEX, REG)}
        hand = {"a": Category.INCONSISTENT, "b": Category.CONSISTENT_ANTI, "c": Category.CONSISTENT_PRO,
                "d": Category.INCONSISTENT, "e": Category.OTHER}
        assert recs == hand


def test_min_tweets_gates_retweet_method():
    rec = label_user("u", rts(9), LEX, REG, config=StanceConfig(min_tweets=10))
    assert rec.combined is Category.OTHER


def test_csv_roundtrip(tmp_path):
    recs = [label_user("u", tweets(10) + rts(10), LEX, REG), _rec(Category.OTHER)]
    write_stance_csv(tmp_path / "s.csv", recs, "prov")
    back = read_stance_csv(tmp_path / "s.csv")
    assert [(r.user_id, r.combined, r.hashtag_stance) for r in back] == \
        [(r.user_id, r.combined, r.hashtag_stance) for r in recs]
