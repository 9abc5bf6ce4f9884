"""Weak stance labels from hashtag usage and politician retweets."""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .corpus import Tweet, TweetStore, normalize_hashtag

DIMENSIONS = ("government", "protest", "venezuela")
_TAG_RE = re.compile(r"#(\w+)")


class Stance(str, Enum):
    PRO = "pro"
    ANTI = "anti"
    INCONSISTENT = "inconsistent"
    NONE = "none"

    def __str__(self) -> str:
        return self.value


class Category(str, Enum):
    CONSISTENT_ANTI = "consistent_anti_government"
    CONSISTENT_PRO = "consistent_pro_government"
    INCONSISTENT = "inconsistent"
    OTHER = "other"

    def __str__(self) -> str:
        return self.value


CATEGORIES = (Category.CONSISTENT_ANTI, Category.CONSISTENT_PRO, Category.INCONSISTENT, Category.OTHER)


class HashtagLexicon:
    """(dimension, hashtag) -> pro/anti."""

    def __init__(self, entries: Optional[Mapping[tuple, str]] = None):
        self.entries: dict[tuple[str, str], Stance] = {}
        for (dim, tag), st in (entries or {}).items():
            self.add(dim, tag, st)

    def add(self, dimension: str, hashtag: str, stance) -> None:
        if dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension {dimension!r}")
        stance = Stance(stance)
        if stance not in (Stance.PRO, Stance.ANTI):
            raise ValueError("lexicon stances must be pro or anti")
        key = (dimension, normalize_hashtag(hashtag))
        if self.entries.get(key, stance) != stance:
            raise ValueError(f"hashtag {key[1]!r} has conflicting stances for {dimension}")
        self.entries[key] = stance

    def get(self, dimension: str, hashtag: str) -> Optional[Stance]:
        return self.entries.get((dimension, hashtag))

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def read_csv(cls, path) -> "HashtagLexicon":
        lex = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                lex.add(row["dimension"].strip(), row["hashtag"].strip(), row["stance"].strip())
        return lex


class PoliticianRegistry(dict):
    """user_id -> stance toward the government."""

    @classmethod
    def read_csv(cls, path) -> "PoliticianRegistry":
        reg = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                uid, st = row["user_id"].strip(), Stance(row["stance"].strip())
                if reg.get(uid, st) != st:
                    raise ValueError(f"politician {uid} listed with two stances")
                reg[uid] = st
        return reg


def read_descriptions_csv(path) -> dict[str, str]:
    """user_id -> profile description."""
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["user_id"].strip(): row.get("description") or ""
                for row in csv.DictReader(line for line in fh if not line.startswith("#"))}


@dataclass
class UserStanceRecord:
    user_id: str
    hashtag_stance: Stance
    p_hashtag: float
    retweet_stance: Stance
    p_retweet: float
    combined: Category
    government: Stance = Stance.NONE
    p_government: float = 0.0
    protest: Stance = Stance.NONE
    p_protest: float = 0.0
    venezuela: Stance = Stance.NONE
    p_venezuela: float = 0.0


def _label_tags(tags: Iterable[str], lexicon: HashtagLexicon, dimension: str) -> Stance:
    seen = {lexicon.get(dimension, t) for t in tags} - {None}
    if seen == {Stance.PRO}:
        return Stance.PRO
    if seen == {Stance.ANTI}:
        return Stance.ANTI
    if seen:
        return Stance.INCONSISTENT
    return Stance.NONE


def label_tweet_by_hashtags(tweet: Tweet, lexicon: HashtagLexicon, dimension: str) -> Stance:
    return _label_tags(tweet.hashtags, lexicon, dimension)


def _decide(n_pro: int, n_anti: int, total: int, threshold: float) -> tuple[Stance, float]:
    if total == 0:
        return Stance.NONE, 0.0
    best, stance = (n_pro, Stance.PRO) if n_pro >= n_anti else (n_anti, Stance.ANTI)
    p = best / total
    # integer comparison keeps the boundary exactly inclusive (19/20 at 0.95)
    if n_pro != n_anti and best >= threshold * total - 1e-9:
        return stance, p
    return Stance.NONE, p


def _check_threshold(threshold: float) -> None:
    if not 0.5 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0.5, 1]")


def label_user_hashtag(tweets: Sequence[Tweet], description: str, lexicon: HashtagLexicon, dimension: str,
                       threshold: float = 0.95, min_tweets: int = 10,
                       denominator: str = "stance") -> tuple[Stance, float]:
    """User stance on one dimension from the hashtags of their tweets.

    The description counts as one extra observation when it carries lexicon
    tags. With ``denominator="stance"`` the share is taken over stance-bearing
    observations (inconsistent tweets included); ``"all"`` divides by every
    tweet plus the description observation.
    """
    _check_threshold(threshold)
    if denominator not in ("stance", "all"):
        raise ValueError("denominator must be 'stance' or 'all'")
    if len(tweets) < min_tweets:
        return Stance.NONE, 0.0
    labels = [label_tweet_by_hashtags(t, lexicon, dimension) for t in tweets]
    n_obs = len(labels)
    if description:
        desc = _label_tags((normalize_hashtag(m) for m in _TAG_RE.findall(description)), lexicon, dimension)
        if desc is not Stance.NONE:
            labels.append(desc)
        n_obs += 1
    counts = Counter(labels)
    bearing = counts[Stance.PRO] + counts[Stance.ANTI] + counts[Stance.INCONSISTENT]
    total = bearing if denominator == "stance" else n_obs
    if bearing == 0:
        return Stance.NONE, 0.0
    return _decide(counts[Stance.PRO], counts[Stance.ANTI], total, threshold)


def label_user_retweet(tweets: Sequence[Tweet], registry: Mapping[str, Stance],
                       threshold: float = 0.90) -> tuple[Stance, float]:
    """User stance toward the government from retweets of registered politicians."""
    _check_threshold(threshold)
    counts = Counter(registry[t.retweeted_user_id] for t in tweets
                     if t.retweeted_user_id is not None and t.retweeted_user_id in registry)
    total = counts[Stance.PRO] + counts[Stance.ANTI]
    return _decide(counts[Stance.PRO], counts[Stance.ANTI], total, threshold)


def combine_dimensions(gov: Stance, protest: Stance) -> Category:
    """Government and protest stances to a combined user category.

    A lone government label carries; a lone protest label does not.
    """
    gov, protest = Stance(gov), Stance(protest)
    if Stance.INCONSISTENT in (gov, protest):
        return Category.INCONSISTENT
    if gov is Stance.PRO and protest is Stance.ANTI:
        return Category.CONSISTENT_PRO
    if gov is Stance.ANTI and protest is Stance.PRO:
        return Category.CONSISTENT_ANTI
    if gov is not Stance.NONE and protest is not Stance.NONE:
        return Category.INCONSISTENT
    if protest is Stance.NONE and gov is Stance.PRO:
        return Category.CONSISTENT_PRO
    if protest is Stance.NONE and gov is Stance.ANTI:
        return Category.CONSISTENT_ANTI
    return Category.OTHER


def merge_methods(hashtag: Stance, retweet: Stance) -> Stance:
    """Final government stance from the two labeling methods.

    Agreement keeps the label, disagreement is inconsistent, a single label
    wins, and no label at all is NONE (reported as "other").
    """
    hashtag, retweet = Stance(hashtag), Stance(retweet)
    if hashtag is Stance.NONE:
        return retweet
    if retweet is Stance.NONE or hashtag is retweet:
        return hashtag
    return Stance.INCONSISTENT


_CATEGORY_OF = {
    Stance.PRO: Category.CONSISTENT_PRO,
    Stance.ANTI: Category.CONSISTENT_ANTI,
    Stance.INCONSISTENT: Category.INCONSISTENT,
    Stance.NONE: Category.OTHER,
}
_STANCE_OF = {
    Category.CONSISTENT_PRO: Stance.PRO,
    Category.CONSISTENT_ANTI: Stance.ANTI,
    Category.INCONSISTENT: Stance.INCONSISTENT,
    Category.OTHER: Stance.NONE,
}


def category_of(stance: Stance) -> Category:
    return _CATEGORY_OF[Stance(stance)]


@dataclass
class StanceConfig:
    hashtag_threshold: float = 0.95
    retweet_threshold: float = 0.90
    min_tweets: int = 10
    denominator: str = "stance"


def label_user(user_id: str, tweets: Sequence[Tweet], lexicon: HashtagLexicon,
               registry: Mapping[str, Stance], description: str = "",
               config: Optional[StanceConfig] = None) -> UserStanceRecord:
    cfg = config or StanceConfig()
    dims = {}
    for dim in DIMENSIONS:
        dims[dim] = label_user_hashtag(tweets, description, lexicon, dim, cfg.hashtag_threshold,
                                       cfg.min_tweets, cfg.denominator)
    hashtag_cat = combine_dimensions(dims["government"][0], dims["protest"][0])
    hashtag_stance = _STANCE_OF[hashtag_cat]
    p_hashtag = dims["government"][1] if dims["government"][0] is not Stance.NONE else dims["protest"][1]
    if len(tweets) < cfg.min_tweets:
        retweet, p_rt = Stance.NONE, 0.0
    else:
        retweet, p_rt = label_user_retweet(tweets, registry, cfg.retweet_threshold)
    final = merge_methods(hashtag_stance, retweet)
    return UserStanceRecord(
        user_id, hashtag_stance, p_hashtag, retweet, p_rt, category_of(final),
        dims["government"][0], dims["government"][1], dims["protest"][0], dims["protest"][1],
        dims["venezuela"][0], dims["venezuela"][1],
    )


def label_users(store: TweetStore, lexicon: HashtagLexicon, registry: Mapping[str, Stance],
                descriptions: Optional[Mapping[str, str]] = None,
                config: Optional[StanceConfig] = None) -> list[UserStanceRecord]:
    descriptions = descriptions or {}
    return [label_user(u, store.by_user(u), lexicon, registry, descriptions.get(u, ""), config)
            for u in store.users()]


def stance_distribution(records: Sequence[UserStanceRecord]) -> dict[str, float]:
    """Percentage of users in each combined category (sums to 100)."""
    if not records:
        raise ValueError("no user records")
    counts = Counter(r.combined for r in records)
    n = len(records)
    return {c.value: 100.0 * counts[c] / n for c in CATEGORIES}


STANCE_CSV_FIELDS = ["user_id", "hashtag_stance", "p_hashtag", "retweet_stance", "p_retweet", "combined",
                     "venezuela"]


def write_stance_csv(path, records: Iterable[UserStanceRecord], header_comment: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write("# " + header_comment + "\n")
        w = csv.writer(fh)
        w.writerow(STANCE_CSV_FIELDS)
        for r in records:
            w.writerow([r.user_id, r.hashtag_stance.value, f"{r.p_hashtag:.6f}", r.retweet_stance.value,
                        f"{r.p_retweet:.6f}", r.combined.value, r.venezuela.value])


def read_stance_csv(path) -> list[UserStanceRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            out.append(UserStanceRecord(
                row["user_id"], Stance(row["hashtag_stance"]), float(row["p_hashtag"]),
                Stance(row["retweet_stance"]), float(row["p_retweet"]), Category(row["combined"]),
                venezuela=Stance(row.get("venezuela") or "none"),
            ))
    return out
