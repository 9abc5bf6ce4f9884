import json
from collections import Counter

import numpy as np
import pytest
from sklearn.metrics import normalized_mutual_info_score

from polarscope.corpus import ingest_tweets, top_k_vocab
from polarscope.flow import build_transitions
from polarscope.mediagraph import build_bipartite, louvain, project_media, read_media_registry
from polarscope.stance import HashtagLexicon, PoliticianRegistry, label_users, stance_distribution
from polarscope.synth import (MarkovUserSpec, PlantedMediaSpec, SwapSpec, WorldSpec, gen_markov_users,
                              gen_planted_media, gen_planted_swap, gen_world, sample_chains, word_forms,
                              write_world)

SMALL_SWAP = SwapSpec(vocab_size=300, n_swaps=5, tokens_per_community=20_000, n_templates=200, n_stopwords=50,
                      swap_rank_range=(50, 100))


class TestWordForms:
    def test_unique_and_excluded(self):
        rng = np.random.default_rng(0)
        a = word_forms(500, rng)
        b = word_forms(50, rng, exclude=a)
        assert len(set(a)) == 500 and not set(a) & set(b)


@pytest.fixture(scope="module")
def ps():
    return gen_planted_swap(SMALL_SWAP, 0)


class TestPlantedSwap:
    def test_deterministic(self, ps):
        again = gen_planted_swap(SMALL_SWAP, 0)
        assert again.corpus_a.token_sequences == ps.corpus_a.token_sequences
        assert again.corpus_b.token_sequences == ps.corpus_b.token_sequences

    def test_seed_matters(self, ps):
        assert gen_planted_swap(SMALL_SWAP, 1).corpus_a.token_sequences != ps.corpus_a.token_sequences

    def test_sizes(self, ps):
        for c in (ps.corpus_a, ps.corpus_b):
            assert 20_000 <= c.token_count < 20_000 + 40

    def test_swap_replaces_everywhere(self, ps):
        ca = Counter(w for s in ps.corpus_a.token_sequences for w in s)
        cb = Counter(w for s in ps.corpus_b.token_sequences for w in s)
        for w1, w2 in ps.pairs:
            assert ca[w1] > 0 and ca[w2] == 0
            assert cb[w2] > 0 and cb[w1] == 0

    def test_swapped_ranks(self, ps):
        pos = {w: i for i, w in enumerate(ps.vocab)}
        assert all(50 <= pos[w1] < 100 for w1, _ in ps.pairs)
        assert len(ps.pairs) == 5 and len(ps.anchors) == 50

    def test_zipf_head(self, ps):
        top = top_k_vocab([ps.corpus_a], 5)
        assert top[0] == ps.vocab[0]

    def test_invalid(self):
        with pytest.raises(ValueError):
            gen_planted_swap(SwapSpec(vocab_size=100, swap_rank_range=(50, 60), n_swaps=20), 0)


class TestPlantedMedia:
    def test_disconnected_when_no_inter(self):
        pm = gen_planted_media(PlantedMediaSpec(inter=0.0), 0)
        assert all(pm.user_community[t.user_id] == pm.partition[t.retweeted_user_id] for t in pm.retweets)

    def test_rates(self):
        spec = PlantedMediaSpec()
        pm = gen_planted_media(spec, 1)
        same = sum(pm.user_community[t.user_id] == pm.partition[t.retweeted_user_id] for t in pm.retweets)
        n_pairs_same = 2 * 200 * 20
        assert same / n_pairs_same == pytest.approx(0.5, abs=0.02)
        assert (len(pm.retweets) - same) / n_pairs_same == pytest.approx(0.05, abs=0.01)

    def test_deterministic(self):
        a, b = gen_planted_media(PlantedMediaSpec(), 3), gen_planted_media(PlantedMediaSpec(), 3)
        assert a.retweets == b.retweets

    def test_no_structure_measured(self):
        scores = []
        for seed in range(3):
            pm = gen_planted_media(PlantedMediaSpec(intra=0.3, inter=0.3), seed)
            ca = louvain(project_media(build_bipartite(pm.retweets, list(pm.partition))), seed=seed)
            scores.append(normalized_mutual_info_score([pm.partition[m] for m in ca.membership],
                                                       list(ca.membership.values())))
        assert np.mean(scores) < 0.2


class TestMarkovUsers:
    def test_identity_constant(self):
        mu = gen_markov_users(MarkovUserSpec(P=np.eye(3), n_users=50, chain_length=10), 0)
        assert (mu.states == mu.states[:, :1]).all()

    def test_uniform_lln(self):
        P = np.full((2, 2), 0.5)
        mu = gen_markov_users(MarkovUserSpec(P=P, n_users=10_000, chain_length=20), 0)
        assert np.abs(build_transitions(mu.events, mu.cluster_of).P - P).max() < 0.02

    def test_timestamps_increasing(self):
        mu = gen_markov_users(MarkovUserSpec(n_users=30, chain_length=8, media_per_state=3), 2)
        by_user = {}
        for e in mu.events:
            by_user.setdefault(e.user_id, []).append(e.timestamp)
        assert all(np.all(np.diff(ts) > 0) for ts in by_user.values())
        assert {e.media_id for e in mu.events} <= set(mu.cluster_of)

    def test_deterministic(self):
        spec = MarkovUserSpec(n_users=100)
        assert np.array_equal(gen_markov_users(spec, 4).states, gen_markov_users(spec, 4).states)

    def test_chain_oracle(self):
        # lockstep sampler against a per-user loop with the same uniform draws
        P = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.3, 0.3, 0.4]])
        q = np.array([0.2, 0.3, 0.5])
        X = sample_chains(P, 40, 6, np.random.default_rng(9), q)
        rng = np.random.default_rng(9)
        first = rng.random(40)
        steps = [rng.random(40) for _ in range(5)]
        for i in range(40):
            s = int(np.searchsorted(np.cumsum(q), first[i], side="right"))
            assert X[i, 0] == s
            for t in range(5):
                s = int(np.searchsorted(np.cumsum(P[s]), steps[t][i], side="right"))
                assert X[i, t + 1] == s

    def test_invalid(self):
        with pytest.raises(ValueError):
            MarkovUserSpec(P=np.array([[0.5, 0.4], [0.5, 0.5]])).validate()


SMALL_WORLD = WorldSpec(swap=SwapSpec(vocab_size=300, n_swaps=5, tokens_per_community=20_000, n_templates=200,
                                      n_stopwords=50, swap_rank_range=(50, 100)),
                        users_per_stance=30, mixed_users=5, quiet_users=5, media_per_bloc=4, posts_per_media=10)


@pytest.fixture(scope="module")
def world():
    return gen_world(SMALL_WORLD, 0)


class TestWorld:
    def test_deterministic(self, world):
        assert gen_world(SMALL_WORLD, 0).tweets == world.tweets

    def test_stances_recoverable(self, world):
        from polarscope.corpus import TweetStore
        store = TweetStore(world.tweets)
        lex = HashtagLexicon({(d, h): s for d, h, s in world.lexicon})
        reg = PoliticianRegistry(world.politicians)
        recs = {r.user_id: r.combined.value for r in label_users(store, lex, reg)}
        names = {"pro": "consistent_pro_government", "anti": "consistent_anti_government"}
        for u, s in world.truth["user_stance"].items():
            assert recs[u] == names[s], u
        assert all(s == "inconsistent" for u, s in recs.items() if u.startswith("user_mixed"))
        assert all(s == "other" for u, s in recs.items() if u.startswith("user_quiet"))
        d = stance_distribution(list(label_users(store, lex, reg)))
        assert sum(d.values()) == pytest.approx(100.0)

    def test_roundtrip_files(self, world, tmp_path):
        paths = write_world(world, tmp_path, header="polarscope test")
        store = ingest_tweets(paths["tweets"])
        assert len(store) == len(world.tweets) and store.skipped == 0
        assert len(read_media_registry(paths["media"])) == len(world.media)
        assert len(HashtagLexicon.read_csv(paths["lexicon"])) == len(world.lexicon)
        assert dict(PoliticianRegistry.read_csv(paths["politicians"])) == \
            {k: v for k, v in world.politicians.items()}
        truth = json.loads(open(paths["truth"]).read())
        assert truth["_provenance"] == "polarscope test"
        for p in paths.values():
            assert open(p, encoding="utf-8").readline().startswith(("# polarscope", "{"))

    def test_media_blocs_recoverable(self, world):
        media = [m["media_user_id"] for m in world.media]
        g = build_bipartite(world.tweets, media)
        ca = louvain(project_media(g))
        truth = [world.truth["media_bloc"][m] for m in ca.membership]
        assert normalized_mutual_info_score(truth, list(ca.membership.values())) == 1.0
