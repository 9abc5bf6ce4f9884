"""Synthetic data with planted ground truth for every pipeline stage."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import StanceCorpus, Tweet
from .flow import RetweetEvent

_ONSETS = ["b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "ch", "br", "tr", "pl", "gr"]
_VOWELS = ["a", "e", "i", "o", "u"]
_CODAS = ["", "", "", "n", "s", "r", "l"]


def word_forms(n: int, rng: np.random.Generator, exclude=()) -> list[str]:
    """``n`` distinct pseudo-Spanish word forms of 2-4 syllables."""
    seen = set(exclude)
    out = []
    while len(out) < n:
        k = rng.integers(2, 5)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    + _CODAS[rng.integers(len(_CODAS))] for _ in range(k))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


@dataclass
class SwapSpec:
    vocab_size: int = 2000
    zipf_exponent: float = 1.0
    n_swaps: int = 20
    tokens_per_community: int = 200_000
    n_templates: int = 1000
    n_stopwords: int = 200
    swap_rank_range: tuple = (200, 400)
    context_words_per_pair: int = 0
    min_templates_per_swap: int = 12
    sentence_len: tuple = (8, 16)

    def validate(self) -> None:
        lo, hi = self.swap_rank_range
        if not (self.n_stopwords <= lo < hi <= self.vocab_size):
            raise ValueError("swap ranks must lie above the stop-words and inside the vocabulary")
        if self.n_swaps * (1 + self.context_words_per_pair) > hi - lo:
            raise ValueError("swap rank range too small for the requested swaps")
        if self.sentence_len[0] < 2 or self.sentence_len[0] > self.sentence_len[1]:
            raise ValueError("invalid sentence length range")


@dataclass
class PlantedSwap:
    corpus_a: StanceCorpus
    corpus_b: StanceCorpus
    pairs: list[tuple[str, str]]
    anchors: list[str]
    vocab: list[str] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (corpus_a, corpus_b, pairs)
        return iter((self.corpus_a, self.corpus_b, self.pairs))


def _sample_community(templates, target_tokens, rng, swap=None) -> list[list[str]]:
    seqs, n = [], 0
    while n < target_tokens:
        t = templates[rng.integers(len(templates))]
        seq = [swap.get(w, w) for w in t] if swap else list(t)
        seqs.append(seq)
        n += len(seq)
    return seqs


def gen_planted_swap(spec: SwapSpec, seed: int) -> PlantedSwap:
    """Two corpora sharing sentence templates; B uses w2 wherever A uses w1.

    Templates are drawn word by word from a Zipf distribution over the base
    vocabulary. Each swapped word is placed in at least
    ``min_templates_per_swap`` templates, optionally followed by dedicated
    context words. Both communities sample
    templates independently until they reach ``tokens_per_community``. The
    top ``n_stopwords`` words serve as anchors.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    vocab = word_forms(spec.vocab_size, rng)
    ranks = np.arange(1, spec.vocab_size + 1, dtype=np.float64)
    p = ranks ** -spec.zipf_exponent
    p /= p.sum()

    lo, hi = spec.swap_rank_range
    chosen = rng.choice(np.arange(lo, hi), size=spec.n_swaps * (1 + spec.context_words_per_pair), replace=False)
    swap_idx = chosen[: spec.n_swaps]
    ctx_idx = chosen[spec.n_swaps:].reshape(spec.n_swaps, spec.context_words_per_pair)
    fresh = word_forms(spec.n_swaps, rng, exclude=vocab)
    pairs = [(vocab[i], w2) for i, w2 in zip(swap_idx, fresh)]
    ctx_of = {int(i): [int(c) for c in row] for i, row in zip(swap_idx, ctx_idx)}

    templates = []
    lmin, lmax = spec.sentence_len
    for _ in range(spec.n_templates):
        length = int(rng.integers(lmin, lmax + 1))
        words = []
        for i in rng.choice(spec.vocab_size, size=length, p=p):
            words.append(vocab[i])
            words.extend(vocab[c] for c in ctx_of.get(int(i), ()))
        templates.append(words)
    # swapped words need varied contexts to be identifiable at all
    for i in swap_idx:
        w = vocab[i]
        have = [k for k, t in enumerate(templates) if w in t]
        others = [k for k in rng.permutation(len(templates)) if k not in set(have)]
        for k in others[: max(0, spec.min_templates_per_swap - len(have))]:
            t = templates[k]
            pos = int(rng.integers(len(t) + 1))
            t[pos:pos] = [w] + [vocab[c] for c in ctx_of[int(i)]]
    # every base word must occur in some template
    present = {w for t in templates for w in t}
    for w in vocab:
        if w not in present:
            t = templates[rng.integers(len(templates))]
            t.insert(int(rng.integers(len(t) + 1)), w)

    swap = dict(pairs)
    rng_a = np.random.default_rng(rng.integers(2 ** 63))
    rng_b = np.random.default_rng(rng.integers(2 ** 63))
    a = StanceCorpus("A", _sample_community(templates, spec.tokens_per_community, rng_a))
    b = StanceCorpus("B", _sample_community(templates, spec.tokens_per_community, rng_b, swap))
    return PlantedSwap(a, b, pairs, vocab[: spec.n_stopwords], vocab)


@dataclass
class PlantedMediaSpec:
    n_communities: int = 2
    media_per_community: int = 20
    users_per_community: int = 200
    intra: float = 0.5
    inter: float = 0.05

    def validate(self) -> None:
        for name in ("intra", "inter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} must lie in [0, 1]")
        if min(self.n_communities, self.media_per_community, self.users_per_community) < 1:
            raise ValueError("community, media and user counts must be positive")


@dataclass
class PlantedMedia:
    retweets: list[Tweet]
    partition: dict[str, int]
    user_community: dict[str, int]

    def __iter__(self):
        return iter((self.retweets, self.partition))


def gen_planted_media(spec: PlantedMediaSpec, seed: int) -> PlantedMedia:
    """Users retweet each outlet of their own block with probability ``intra``
    and each other outlet with probability ``inter`` (one retweet per edge)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    k, nm, nu = spec.n_communities, spec.media_per_community, spec.users_per_community
    media = [f"m{c:02d}_{j:03d}" for c in range(k) for j in range(nm)]
    media_block = np.repeat(np.arange(k), nm)
    users = [f"u{c:02d}_{i:04d}" for c in range(k) for i in range(nu)]
    user_block = np.repeat(np.arange(k), nu)
    prob = np.where(user_block[:, None] == media_block[None, :], spec.intra, spec.inter)
    hit = rng.random(prob.shape) < prob
    out = []
    for i, j in zip(*np.nonzero(hit)):
        tid = f"rt{i:05d}_{j:03d}"
        out.append(Tweet(tid, users[i], float(i * len(media) + j), "", retweeted_tweet_id=f"post_{media[j]}",
                         retweeted_user_id=media[j]))
    return PlantedMedia(out, {m: int(b) for m, b in zip(media, media_block)},
                        {u: int(b) for u, b in zip(users, user_block)})


@dataclass
class MarkovUserSpec:
    P: np.ndarray = field(default_factory=lambda: np.array([[0.9, 0.1], [0.2, 0.8]]))
    n_users: int = 10_000
    chain_length: int = 20
    initial: Optional[np.ndarray] = None
    media_per_state: int = 1

    def validate(self) -> None:
        P = np.asarray(self.P, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("P must be row-stochastic")
        if self.initial is not None:
            q = np.asarray(self.initial, dtype=np.float64)
            if q.shape != (P.shape[0],) or (q < 0).any() or not np.isclose(q.sum(), 1.0):
                raise ValueError("initial distribution must be a probability vector over the states")
        if self.n_users < 1 or self.chain_length < 1 or self.media_per_state < 1:
            raise ValueError("n_users, chain_length and media_per_state must be positive")


@dataclass
class MarkovUsers:
    events: list[RetweetEvent]
    states: np.ndarray
    cluster_of: dict[str, int]


def sample_chains(P: np.ndarray, n_users: int, length: int, rng: np.random.Generator,
                  initial: Optional[np.ndarray] = None) -> np.ndarray:
    """(n_users, length) state matrix; all chains advanced in lockstep."""
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    q = np.full(n, 1.0 / n) if initial is None else np.asarray(initial, dtype=np.float64)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    X = np.empty((n_users, length), dtype=np.int64)
    X[:, 0] = np.minimum(np.searchsorted(np.cumsum(q), rng.random(n_users), side="right"), n - 1)
    for t in range(1, length):
        u = rng.random(n_users)
        X[:, t] = (cum[X[:, t - 1]] <= u[:, None]).sum(axis=1)
    return X


def gen_markov_users(spec: MarkovUserSpec, seed: int) -> MarkovUsers:
    spec.validate()
    rng = np.random.default_rng(seed)
    X = sample_chains(spec.P, spec.n_users, spec.chain_length, rng, spec.initial)
    n = np.asarray(spec.P).shape[0]
    cluster_of = {f"s{s}_m{j}": s for s in range(n) for j in range(spec.media_per_state)}
    pick = rng.integers(spec.media_per_state, size=X.shape)
    events = []
    for i in range(spec.n_users):
        uid = f"user{i:06d}"
        t0 = 1_600_000_000 + int(rng.integers(86_400))
        for t in range(spec.chain_length):
            events.append(RetweetEvent(uid, f"s{X[i, t]}_m{pick[i, t]}", float(t0 + 60 * t), f"{uid}_{t:04d}"))
    return MarkovUsers(events, X, cluster_of)


# Hashtags per (dimension, side); a pro-government user uses the "pro" tags of
# the government dimension and the "anti" tags of the protest dimension.
_TAGS = {
    ("government", "pro"): ["conelpresidente", "fuerzagobierno", "gobiernodelpueblo"],
    ("government", "anti"): ["fueragobierno", "renunciaya", "nomasabusos"],
    ("protest", "pro"): ["paronacional", "apoyoalparo", "todosalacalle"],
    ("protest", "anti"): ["noalparo", "volvamosatrabajar", "bloqueosno"],
    ("venezuela", "pro"): ["hermanosbolivarianos"],
    ("venezuela", "anti"): ["venezuelalibre"],
}
_RELEVANT_WORDS = ["paro", "bloqueo", "marcha", "protesta", "policía", "gases", "detenidos", "huelga",
                   "cabildo", "represión", "dirigentes", "manifestantes"]
_IRRELEVANT_WORDS = ["gol", "partido", "torneo", "concierto", "festival", "película", "teléfono",
                     "aplicación", "campeonato", "estreno", "museo", "videojuego"]


@dataclass
class WorldSpec:
    """A small country: two stance communities, politicians, and two media blocs."""

    swap: SwapSpec = field(default_factory=SwapSpec)
    users_per_stance: int = 150
    mixed_users: int = 20
    quiet_users: int = 20
    politicians_per_stance: int = 10
    politician_retweets: tuple = (3, 8)
    tag_rate: float = 0.6
    reply_rate: float = 0.05
    reply_same_stance: float = 0.85
    media_per_bloc: int = 8
    posts_per_media: int = 40
    relevant_share: float = 0.7
    url_label_share: float = 0.5
    P: list = field(default_factory=lambda: [[0.95, 0.05], [0.10, 0.90]])
    initial: list = field(default_factory=lambda: [0.7, 0.3])
    chain_length: int = 12
    lean_affinity: float = 0.7
    country: str = "synthland"

    def validate(self) -> None:
        self.swap.validate()
        MarkovUserSpec(np.asarray(self.P), 1, self.chain_length, np.asarray(self.initial)).validate()
        if len(self.P) != 2:
            raise ValueError("the synthetic world has exactly two media blocs")
        for name in ("tag_rate", "reply_rate", "reply_same_stance", "relevant_share", "url_label_share",
                     "lean_affinity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.users_per_stance < 1 or self.media_per_bloc < 2 or self.posts_per_media < 2:
            raise ValueError("need users, at least two media per bloc and two posts per outlet")


@dataclass
class World:
    tweets: list[Tweet]
    lexicon: list[tuple[str, str, str]]
    politicians: dict[str, str]
    media: list[dict]
    url_labels: dict[str, str]
    truth: dict


class _Clock:
    def __init__(self, start: int = 1_570_000_000):
        self.t = start

    def tick(self, rng) -> float:
        self.t += int(rng.integers(30, 600))
        return float(self.t)


def _news_text(rng, words, topical, n_topic=2) -> str:
    body = list(rng.choice(words, size=int(rng.integers(6, 11))))
    for w in rng.choice(topical, size=n_topic, replace=False):
        body.insert(int(rng.integers(len(body) + 1)), str(w))
    return " ".join(body)


def gen_world(spec: WorldSpec, seed: int) -> World:
    """Tweets, lexicon, politician registry, media registry and URL labels
    with the planted structure recorded in ``truth``.

    Pro-government users write the sentences of swap corpus A, anti-government
    users those of corpus B. Every labeled user walks a two-state Markov chain
    over the media blocs (0 = local, 1 = regional) and retweets one relevant
    post per step.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    swap = gen_planted_swap(spec.swap, int(rng.integers(2 ** 31)))
    stance_sides = {"pro": ("pro", "anti", "pro"), "anti": ("anti", "pro", "anti")}

    lexicon = sorted((dim, tag, side) for (dim, side), tags in _TAGS.items() for tag in tags)
    politicians = {f"pol_{st}_{i:02d}": st for st in ("pro", "anti") for i in range(spec.politicians_per_stance)}

    tweets: list[Tweet] = []
    next_id = [0]

    def tid() -> str:
        next_id[0] += 1
        return f"t{next_id[0]:09d}"

    clock = _Clock()
    pol_posts = {}
    for pid in sorted(politicians):
        t = Tweet(tid(), pid, clock.tick(rng), "comunicado oficial " + pid.replace("_", " "))
        tweets.append(t)
        pol_posts[pid] = t

    # media: ids sort bloc-major so that community numbering follows blocs
    news_words = word_forms(300, rng, exclude=swap.vocab)
    media, posts = [], {}
    for b, bloc in enumerate(("local", "regional")):
        for j in range(spec.media_per_bloc):
            mid = f"media{b}{j:02d}"
            lean = "pro" if j % 2 == 0 else "anti"
            dom = f"{mid}.example"
            media.append({"media_user_id": mid, "name": f"Medio {b}{j:02d}", "handle": mid, "domain": dom,
                          "country": spec.country, "bloc": bloc, "lean": lean})
            rel, irr = [], []
            for k in range(spec.posts_per_media):
                relevant = rng.random() < spec.relevant_share
                if relevant:
                    section = "nacional" if rng.random() < 0.5 else "sociedad"
                else:
                    section = str(rng.choice(["deportes", "cultura", "tecnologia", "sociedad"]))
                url = f"https://{dom}/{section}/{k:04d}"
                text = _news_text(rng, news_words, _RELEVANT_WORDS if relevant else _IRRELEVANT_WORDS)
                t = Tweet(tid(), mid, clock.tick(rng), text, urls=(url,))
                tweets.append(t)
                (rel if relevant else irr).append(t)
            posts[mid] = (rel, irr)
    relevant_urls = {t.urls[0]: "relevant" for rel, _ in posts.values() for t in rel}
    irrelevant_urls = {t.urls[0]: "irrelevant" for _, irr in posts.values() for t in irr}
    all_urls = sorted({**relevant_urls, **irrelevant_urls}.items())
    labeled_idx = rng.choice(len(all_urls), size=int(round(spec.url_label_share * len(all_urls))), replace=False)
    url_labels = dict(all_urls[i] for i in sorted(labeled_idx))

    users = {f"user_{st}_{i:04d}": st for st in ("pro", "anti") for i in range(spec.users_per_stance)}
    sentences = {"pro": swap.corpus_a.token_sequences, "anti": swap.corpus_b.token_sequences}
    by_stance = {st: sorted(u for u, s in users.items() if s == st) for st in ("pro", "anti")}
    assigned: dict[str, list] = {u: [] for u in users}
    for st, seqs in sentences.items():
        for k, seq in enumerate(seqs):
            assigned[by_stance[st][k % len(by_stance[st])]].append(seq)

    P = np.asarray(spec.P, dtype=np.float64)
    chains = sample_chains(P, len(users), spec.chain_length, rng, np.asarray(spec.initial))
    media_by_bloc = {b: [m for m in media if m["bloc"] == bloc] for b, bloc in enumerate(("local", "regional"))}
    user_list = sorted(users)
    truth_chains = {}
    for ui, uid in enumerate(user_list):
        st = users[uid]
        gov, prot, ven = stance_sides[st]
        acts = []
        for seq in assigned[uid]:
            tags = ()
            if rng.random() < spec.tag_rate:
                dim, side = [("government", gov), ("protest", prot), ("venezuela", ven)][int(rng.integers(3))]
                tags = (str(rng.choice(_TAGS[(dim, side)])),)
            reply = None
            if rng.random() < spec.reply_rate:
                pool = by_stance[st] if rng.random() < spec.reply_same_stance else by_stance[
                    "anti" if st == "pro" else "pro"]
                reply = pool[int(rng.integers(len(pool)))]
                if reply == uid:
                    reply = None
            acts.append(("text", " ".join(seq), tags, reply))
        side_pols = [p for p, s in politicians.items() if s == st]
        for _ in range(int(rng.integers(spec.politician_retweets[0], spec.politician_retweets[1] + 1))):
            acts.append(("pol", side_pols[int(rng.integers(len(side_pols)))]))
        order = rng.permutation(len(acts))
        acts = [acts[i] for i in order]
        # media retweets keep chain order; spread them through the timeline
        slots = np.sort(rng.choice(len(acts) + spec.chain_length, size=spec.chain_length, replace=False))
        for s_i, b in zip(slots, chains[ui]):
            cands = media_by_bloc[int(b)]
            same = [m for m in cands if m["lean"] == st]
            pool = same if rng.random() < spec.lean_affinity else cands
            m = pool[int(rng.integers(len(pool)))]
            rel = posts[m["media_user_id"]][0]
            acts.insert(int(s_i), ("media", rel[int(rng.integers(len(rel)))]))
        truth_chains[uid] = chains[ui].tolist()
        for a in acts:
            ts = clock.tick(rng)
            if a[0] == "text":
                tweets.append(Tweet(tid(), uid, ts, a[1], hashtags=frozenset(a[2]), in_reply_to_user_id=a[3]))
            elif a[0] == "pol":
                src = pol_posts[a[1]]
                tweets.append(Tweet(tid(), uid, ts, "RT @" + src.user_id + ": " + src.text,
                                    retweeted_tweet_id=src.id, retweeted_user_id=src.user_id))
            else:
                src = a[1]
                tweets.append(Tweet(tid(), uid, ts, "RT @" + src.user_id + ": " + src.text, urls=src.urls,
                                    retweeted_tweet_id=src.id, retweeted_user_id=src.user_id))
        # an occasional irrelevant retweet; it never enters the media chains
        m = media[int(rng.integers(len(media)))]
        irr = posts[m["media_user_id"]][1]
        if irr:
            src = irr[int(rng.integers(len(irr)))]
            tweets.append(Tweet(tid(), uid, clock.tick(rng), "RT @" + src.user_id + ": " + src.text, urls=src.urls,
                                retweeted_tweet_id=src.id, retweeted_user_id=src.user_id))

    # users with contradictory tags, and users below the tweet-count cutoff
    filler = swap.corpus_a.token_sequences
    anti_pols = sorted(p for p, s in politicians.items() if s == "anti")
    for i in range(spec.mixed_users):
        # pro-government hashtags but anti-government politician retweets
        uid = f"user_mixed_{i:04d}"
        for k in range(12):
            tweets.append(Tweet(tid(), uid, clock.tick(rng), " ".join(filler[int(rng.integers(len(filler)))]),
                                hashtags=frozenset({_TAGS[("government", "pro")][0]})))
        for k in range(3):
            src = pol_posts[anti_pols[int(rng.integers(len(anti_pols)))]]
            tweets.append(Tweet(tid(), uid, clock.tick(rng), "RT @" + src.user_id + ": " + src.text,
                                retweeted_tweet_id=src.id, retweeted_user_id=src.user_id))
    for i in range(spec.quiet_users):
        uid = f"user_quiet_{i:04d}"
        for k in range(int(rng.integers(1, 10))):
            tweets.append(Tweet(tid(), uid, clock.tick(rng), " ".join(filler[int(rng.integers(len(filler)))]),
                                hashtags=frozenset({_TAGS[("government", "pro")][0]})))

    truth = {
        "seed": seed,
        "country": spec.country,
        "swap_pairs": [list(p) for p in swap.pairs],
        "anchors": swap.anchors,
        "user_stance": users,
        "media_bloc": {m["media_user_id"]: m["bloc"] for m in media},
        "P": P.tolist(),
        "chains": truth_chains,
    }
    return World(tweets, lexicon, politicians, media, url_labels, truth)


def write_world(world: World, out_dir, header: Optional[str] = None) -> dict[str, str]:
    """Write the world in the formats the ingest path reads; returns file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: str(out / fn) for name, fn in [
        ("tweets", "tweets.jsonl"), ("lexicon", "lexicon.csv"), ("politicians", "politicians.csv"),
        ("media", "media.csv"), ("url_labels", "url_labels.csv"), ("stopwords", "anchors.txt"),
        ("truth", "truth.json")]}
    with open(paths["tweets"], "w", encoding="utf-8") as fh:
        if header:
            fh.write("# " + header + "\n")
        for t in sorted(world.tweets, key=lambda t: (t.timestamp, t.id)):
            fh.write(json.dumps(t.to_record(), ensure_ascii=False, sort_keys=True) + "\n")

    def table(path, head, rows):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write("# " + header + "\n")
            w = csv.writer(fh)
            w.writerow(head)
            w.writerows(rows)

    table(paths["lexicon"], ["dimension", "hashtag", "stance"], world.lexicon)
    table(paths["politicians"], ["user_id", "stance"], sorted(world.politicians.items()))
    cols = ["media_user_id", "name", "handle", "domain", "country", "bloc"]
    table(paths["media"], cols, [[m[c] for c in cols] for m in world.media])
    table(paths["url_labels"], ["url", "label"], sorted(world.url_labels.items()))
    with open(paths["stopwords"], "w", encoding="utf-8") as fh:
        if header:
            fh.write("# " + header + "\n")
        fh.write("\n".join(world.truth["anchors"]) + "\n")
    truth = dict(world.truth)
    if header:
        truth["_provenance"] = header
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump(truth, fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
