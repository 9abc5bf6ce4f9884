"""Tweet ingestion, tokenization and per-stance corpus assembly."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional

import numpy as np

logger = logging.getLogger(__name__)

TWEET_FIELDS = (
    "id",
    "user_id",
    "timestamp",
    "text",
    "hashtags",
    "urls",
    "retweeted_tweet_id",
    "retweeted_user_id",
    "in_reply_to_user_id",
    "quoted_user_id",
)

_URL_RE = re.compile(r"(?:https?://|www\.)\S*", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")
_EXTRA_PUNCT = {"¡", "¿"}


@dataclass(frozen=True)
class Tweet:
    id: str
    user_id: str
    timestamp: float
    text: str
    hashtags: frozenset = frozenset()
    urls: tuple = ()
    retweeted_tweet_id: Optional[str] = None
    retweeted_user_id: Optional[str] = None
    in_reply_to_user_id: Optional[str] = None
    quoted_user_id: Optional[str] = None

    @property
    def is_retweet(self) -> bool:
        return self.retweeted_tweet_id is not None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "user_id": self.user_id,
            "timestamp": self.timestamp,
            "text": self.text,
            "hashtags": sorted(self.hashtags),
            "urls": list(self.urls),
            "retweeted_tweet_id": self.retweeted_tweet_id,
            "retweeted_user_id": self.retweeted_user_id,
            "in_reply_to_user_id": self.in_reply_to_user_id,
            "quoted_user_id": self.quoted_user_id,
        }


def normalize_hashtag(tag: str) -> str:
    return unicodedata.normalize("NFC", tag).lstrip("#").lower()


def make_tweet(**fields) -> Tweet:
    """Build a Tweet, normalizing hashtags and optional ids."""
    tags = fields.pop("hashtags", None) or ()
    urls = fields.pop("urls", None) or ()
    opt = {}
    for key in ("retweeted_tweet_id", "retweeted_user_id", "in_reply_to_user_id", "quoted_user_id"):
        val = fields.pop(key, None)
        opt[key] = None if val in (None, "") else str(val)
    return Tweet(
        id=str(fields.pop("id")),
        user_id=str(fields.pop("user_id")),
        timestamp=float(fields.pop("timestamp", 0.0) or 0.0),
        text=str(fields.pop("text")),
        hashtags=frozenset(normalize_hashtag(t) for t in tags if normalize_hashtag(t)),
        urls=tuple(str(u) for u in urls),
        **opt,
    )


class TweetStore:
    """Tweets indexed by id, user and hashtag.

    Iteration is ordered by (timestamp, id) regardless of insertion order.
    """

    def __init__(self, tweets: Iterable[Tweet] = ()):
        self._by_id: dict[str, Tweet] = {}
        self._by_user: dict[str, list[str]] = defaultdict(list)
        self._by_tag: dict[str, list[str]] = defaultdict(list)
        self._order: Optional[list[str]] = None
        self.skipped = 0
        self.duplicates = 0
        for t in tweets:
            self.add(t)

    def add(self, tweet: Tweet) -> bool:
        if not tweet.id:
            raise ValueError("tweet id must be nonempty")
        if tweet.id in self._by_id:
            self.duplicates += 1
            return False
        self._by_id[tweet.id] = tweet
        self._by_user[tweet.user_id].append(tweet.id)
        for tag in tweet.hashtags:
            self._by_tag[tag].append(tweet.id)
        self._order = None
        return True

    def _sorted_ids(self) -> list[str]:
        if self._order is None:
            self._order = sorted(self._by_id, key=lambda i: (self._by_id[i].timestamp, i))
        return self._order

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Tweet]:
        for i in self._sorted_ids():
            yield self._by_id[i]

    def __contains__(self, tweet_id) -> bool:
        return tweet_id in self._by_id

    def get(self, tweet_id: str) -> Optional[Tweet]:
        return self._by_id.get(tweet_id)

    def users(self) -> list[str]:
        return sorted(self._by_user)

    def by_user(self, user_id: str) -> list[Tweet]:
        tweets = [self._by_id[i] for i in self._by_user.get(user_id, ())]
        return sorted(tweets, key=lambda t: (t.timestamp, t.id))

    def by_hashtag(self, tag: str) -> list[Tweet]:
        tweets = [self._by_id[i] for i in self._by_tag.get(normalize_hashtag(tag), ())]
        return sorted(tweets, key=lambda t: (t.timestamp, t.id))

    def write_jsonl(self, path, header: Optional[str] = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if header:
                fh.write("# " + header + "\n")
            for t in self:
                fh.write(json.dumps(t.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def ingest_tweets(path, schema: Optional[Mapping[str, str]] = None) -> TweetStore:
    """Read line-delimited JSON tweet records into a TweetStore.

    ``schema`` maps canonical field names (see ``TWEET_FIELDS``) to the key used
    in the source records. Lines starting with '#' are comments. Lines that
    fail to parse or lack id/user_id/text are skipped and counted in
    ``store.skipped``; repeated ids are counted in ``store.duplicates``.
    """
    schema = dict(schema or {})
    unknown = set(schema) - set(TWEET_FIELDS)
    if unknown:
        raise ValueError(f"unknown schema fields: {sorted(unknown)}")
    keys = {f: schema.get(f, f) for f in TWEET_FIELDS}
    store = TweetStore()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read tweet file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
                fields = {f: rec.get(k) for f, k in keys.items()}
                if not fields["id"] or not fields["user_id"] or fields["text"] is None:
                    raise ValueError("missing id/user_id/text")
                tweet = make_tweet(**fields)
            except (ValueError, TypeError) as exc:
                store.skipped += 1
                logger.debug("skipping line %d of %s: %s", lineno, path, exc)
                continue
            store.add(tweet)
    if store.skipped or store.duplicates:
        logger.warning("%s: skipped %d malformed, %d duplicate records", path, store.skipped, store.duplicates)
    return store


def _is_stripped(ch: str) -> bool:
    if ch in _EXTRA_PUNCT:
        return True
    cat = unicodedata.category(ch)
    # P*: punctuation; So/Sk: emoji and modifiers; Cf: joiners; Mn only for variation selectors
    if cat[0] == "P" or cat in ("So", "Sk", "Cf"):
        return True
    return "\ufe00" <= ch <= "\ufe0f"


def tokenize(text: str) -> list[str]:
    """Lowercased tokens with URLs, mentions, punctuation and emoji removed.

    Hashtags keep their word (``#Dignidad`` -> ``dignidad``); accents are kept.

    >>> tokenize("Fuera @user! http://x.co #Dignidad")
    ['fuera', 'dignidad']
    >>> tokenize("¡NO al 883!")
    ['no', 'al', '883']
    """
    if not text:
        return []
    text = unicodedata.normalize("NFC", text)
    text = _URL_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    text = unicodedata.normalize("NFC", text.lower())
    text = "".join(" " if _is_stripped(ch) else ch for ch in text)
    return text.split()


@dataclass
class StanceCorpus:
    stance: str
    token_sequences: list[list[str]] = field(default_factory=list)
    source_user_count: int = 0

    @property
    def token_count(self) -> int:
        return sum(len(s) for s in self.token_sequences)

    def __len__(self) -> int:
        return len(self.token_sequences)

    def write(self, path, header: Optional[str] = None) -> None:
        """One whitespace-joined sequence per line; optional '#' header line."""
        with open(path, "w", encoding="utf-8") as fh:
            if header:
                fh.write("# " + header + "\n")
            for seq in self.token_sequences:
                fh.write(" ".join(seq) + "\n")

    @classmethod
    def read(cls, path, stance: str = "") -> "StanceCorpus":
        seqs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                # tokens never contain '#', so a leading '#' marks a header line
                if line.startswith("#"):
                    continue
                toks = line.split()
                if toks:
                    seqs.append(toks)
        return cls(stance=stance, token_sequences=seqs)


def _dedup_key(tweet: Tweet, tokens: list[str]) -> Optional[str]:
    if tweet.retweeted_tweet_id is not None:
        return "id:" + tweet.retweeted_tweet_id
    if tweet.retweeted_user_id is not None:
        # retweet without an original id: fall back to normalized text
        return "text:" + " ".join(tokens)
    return None


def build_stance_corpus(store: TweetStore, labels: Mapping[str, str], stance: str) -> StanceCorpus:
    """Tokenized tweets of users labeled ``stance``.

    Retweeted content enters the corpus once no matter how many users
    retweeted it; an original tweet and its retweets share one slot.
    """
    if not labels:
        raise ValueError("labels must be nonempty")
    seen: set[str] = set()
    seqs: list[list[str]] = []
    users: set[str] = set()
    for tweet in store:
        if labels.get(tweet.user_id) != stance:
            continue
        tokens = tokenize(tweet.text)
        key = _dedup_key(tweet, tokens)
        if key is None:
            key = "id:" + tweet.id
        if key in seen:
            continue
        seen.add(key)
        if tokens:
            seqs.append(tokens)
            users.add(tweet.user_id)
    return StanceCorpus(stance=stance, token_sequences=seqs, source_user_count=len(users))


def subsample_corpus(corpus: StanceCorpus, target_tokens: int, seed: int) -> StanceCorpus:
    """Draw whole sequences without replacement until ``target_tokens`` is reached."""
    total = corpus.token_count
    if target_tokens > total:
        raise ValueError(f"target_tokens={target_tokens} exceeds corpus size {total}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.token_sequences))
    picked, count = [], 0
    for i in order:
        if count >= target_tokens:
            break
        seq = corpus.token_sequences[i]
        picked.append(seq)
        count += len(seq)
    return StanceCorpus(stance=corpus.stance, token_sequences=picked,
                        source_user_count=corpus.source_user_count)


def word_counts(corpora: Iterable[StanceCorpus]) -> Counter:
    counts: Counter = Counter()
    for c in corpora:
        for seq in c.token_sequences:
            counts.update(seq)
    return counts


def top_k_vocab(corpora: Iterable[StanceCorpus], k: int) -> list[str]:
    """Most frequent words over all corpora, ties broken lexicographically."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = word_counts(corpora)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [w for w, _ in ranked[:k]]
