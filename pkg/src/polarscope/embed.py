"""Skip-gram negative-sampling embeddings with hashed character n-grams.

A word's vector is the mean of its own input row and the rows of its hashed
character n-grams (word wrapped in ``<`` ``>``). Training is plain SGD with a
linearly decaying learning rate; the inner loop is compiled with numba.
"""

from __future__ import annotations

import json
import logging
import struct
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numba
import numpy as np

from .corpus import StanceCorpus

logger = logging.getLogger(__name__)

MAGIC = b"PSEMB001"
_NEG_TABLE_SIZE = 1_000_000


@dataclass
class EmbedConfig:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    min_count: int = 5
    subword_min: int = 3
    subword_max: int = 6
    bucket_count: int = 2 ** 21
    learning_rate: float = 0.05
    sample: float = 1e-4
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.subword_min > self.subword_max:
            raise ValueError("subword_min must be <= subword_max")
        if self.window < 1 or self.negatives < 0 or self.min_count < 1:
            raise ValueError("window >= 1, negatives >= 0, min_count >= 1 required")
        if self.bucket_count < 1 or self.learning_rate <= 0 or self.workers < 1:
            raise ValueError("bucket_count, learning_rate and workers must be positive")


def fnv1a(s: str) -> int:
    """32-bit FNV-1a over the UTF-8 bytes of ``s``."""
    h = 2166136261
    for b in s.encode("utf-8"):
        h ^= b
        h = (h * 16777619) & 0xFFFFFFFF
    return h


def char_ngrams(word: str, nmin: int, nmax: int) -> list[str]:
    """Character n-grams of ``<word>``, excluding the full bracketed word."""
    w = "<" + word + ">"
    out = []
    for n in range(nmin, nmax + 1):
        if n >= len(w):
            break
        out.extend(w[i:i + n] for i in range(len(w) - n + 1))
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def sgns_loss(rows: np.ndarray, pos: np.ndarray, negs: np.ndarray) -> float:
    """Loss of one (center, context, negatives) example.

    ``rows`` are the input rows averaged into the hidden vector, ``pos`` the
    context output vector and ``negs`` the negative output vectors.
    """
    h = rows.mean(axis=0)
    loss = -np.log(_sigmoid(pos @ h))
    if len(negs):
        loss -= np.log(_sigmoid(-(negs @ h))).sum()
    return float(loss)


def sgns_grads(rows: np.ndarray, pos: np.ndarray, negs: np.ndarray):
    """Analytic gradients of :func:`sgns_loss` wrt ``rows``, ``pos``, ``negs``."""
    h = rows.mean(axis=0)
    gp = _sigmoid(pos @ h) - 1.0
    gn = _sigmoid(negs @ h) if len(negs) else np.zeros(0)
    dh = gp * pos + gn @ negs
    d_rows = np.repeat(dh[None, :] / len(rows), len(rows), axis=0)
    return d_rows, gp * h, gn[:, None] * h[None, :]


@numba.njit(cache=True)
def _update(wi, wo, ids, target, negs, lr, hidden, grad):
    """One SGD step; returns the example loss before the step.

    Every subword row receives the full hidden-layer gradient (no 1/len(ids)).
    """
    dim = wi.shape[1]
    m = ids.shape[0]
    for d in range(dim):
        hidden[d] = 0.0
        grad[d] = 0.0
    for j in range(m):
        r = ids[j]
        for d in range(dim):
            hidden[d] += wi[r, d]
    for d in range(dim):
        hidden[d] /= m
    loss = 0.0
    for k in range(negs.shape[0] + 1):
        if k == 0:
            t = target
            label = 1.0
        else:
            t = negs[k - 1]
            label = 0.0
        dot = 0.0
        for d in range(dim):
            dot += wo[t, d] * hidden[d]
        if dot > 30.0:
            score = 1.0
        elif dot < -30.0:
            score = 0.0
        else:
            score = 1.0 / (1.0 + np.exp(-dot))
        if label > 0:
            loss -= np.log(max(score, 1e-12))
        else:
            loss -= np.log(max(1.0 - score, 1e-12))
        alpha = lr * (label - score)
        for d in range(dim):
            grad[d] += alpha * wo[t, d]
            wo[t, d] += alpha * hidden[d]
    for j in range(m):
        r = ids[j]
        for d in range(dim):
            wi[r, d] += grad[d]
    return loss


@numba.njit(cache=True)
def _train_span(wi, wo, tokens, sent_off, s_begin, s_end, sub_off, sub_ids, neg_table,
                pdiscard, window, n_neg, lr0, done0, total, seed):
    """Train over sentences [s_begin, s_end). Returns raw tokens processed."""
    np.random.seed(seed)
    dim = wi.shape[1]
    hidden = np.zeros(dim, dtype=wi.dtype)
    grad = np.zeros(dim, dtype=wi.dtype)
    negs = np.zeros(n_neg, dtype=np.int64)
    nwords = wo.shape[0]
    ntab = neg_table.shape[0]
    line = np.zeros(0, dtype=np.int64)
    done = done0
    for s in range(s_begin, s_end):
        a = sent_off[s]
        b = sent_off[s + 1]
        if line.shape[0] < b - a:
            line = np.zeros(b - a, dtype=np.int64)
        n = 0
        for p in range(a, b):
            w = tokens[p]
            if np.random.random() < pdiscard[w]:
                line[n] = w
                n += 1
        lr = lr0 * (1.0 - done / total)
        if lr < lr0 * 1e-4:
            lr = lr0 * 1e-4
        for i in range(n):
            c = line[i]
            ids = sub_ids[sub_off[c]:sub_off[c + 1]]
            bound = np.random.randint(1, window + 1)
            for off in range(-bound, bound + 1):
                if off == 0 or i + off < 0 or i + off >= n:
                    continue
                t = line[i + off]
                for k in range(n_neg):
                    neg = t
                    if nwords > 1:
                        while neg == t:
                            neg = neg_table[np.random.randint(0, ntab)]
                    negs[k] = neg
                _update(wi, wo, ids, t, negs, lr, hidden, grad)
        done += b - a
    return done - done0


@numba.njit(parallel=True, cache=True)
def _train_parallel(wi, wo, tokens, sent_off, bounds, sub_off, sub_ids, neg_table,
                    pdiscard, window, n_neg, lr0, done0, total, seeds):
    # lock-free shared updates; lost updates are tolerated
    for k in numba.prange(bounds.shape[0] - 1):
        _train_span(wi, wo, tokens, sent_off, bounds[k], bounds[k + 1], sub_off, sub_ids,
                    neg_table, pdiscard, window, n_neg, lr0, done0, total, seeds[k])


class EmbeddingModel:
    """Word and subword vectors for one community's corpus."""

    def __init__(self, words: Sequence[str], counts: Sequence[int], wi: np.ndarray,
                 wo: np.ndarray, config: EmbedConfig, loss_history: Optional[list] = None):
        self.words = list(words)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.config = config
        self.wi = wi
        self.wo = wo
        self.loss_history = list(loss_history or [])
        self._sub_off, self._sub_ids = _subword_table(self.words, config)
        self._unit: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.wi.shape[1]

    @property
    def word_vectors(self) -> np.ndarray:
        return self.wi[: len(self.words)]

    @property
    def subword_vectors(self) -> np.ndarray:
        return self.wi[len(self.words):]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def subword_ids(self, word: str) -> np.ndarray:
        """Input-row ids composing ``word`` (word row first when in vocab)."""
        i = self.index.get(word)
        if i is not None:
            return self._sub_ids[self._sub_off[i]:self._sub_off[i + 1]]
        cfg = self.config
        grams = char_ngrams(word, cfg.subword_min, cfg.subword_max)
        return np.array([len(self.words) + fnv1a(g) % cfg.bucket_count for g in grams], dtype=np.int64)

    def composed_matrix(self) -> np.ndarray:
        """Composed vectors of the whole vocabulary, one row per word."""
        rows = self.wi[self._sub_ids].astype(np.float64)
        sums = np.add.reduceat(rows, self._sub_off[:-1], axis=0)
        return sums / np.diff(self._sub_off)[:, None]

    def unit_matrix(self) -> np.ndarray:
        if self._unit is None:
            m = self.composed_matrix()
            norms = np.linalg.norm(m, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            self._unit = m / norms
        return self._unit

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha1()
        h.update("\n".join(self.words).encode("utf-8"))
        h.update(np.ascontiguousarray(self.wi).tobytes())
        return h.hexdigest()[:16]

    @classmethod
    def from_vectors(cls, words: Sequence[str], vectors: np.ndarray, config: Optional[EmbedConfig] = None):
        """Wrap fixed word vectors; subword rows are zero and unused for in-vocab words."""
        vectors = np.asarray(vectors)
        if config is None:
            config = EmbedConfig(dim=vectors.shape[1], bucket_count=1, min_count=1)
        wi = np.zeros((len(words) + config.bucket_count, vectors.shape[1]), dtype=vectors.dtype)
        wi[: len(words)] = vectors
        model = cls(words, np.ones(len(words), dtype=np.int64), wi,
                    np.zeros((len(words), vectors.shape[1]), dtype=vectors.dtype), config)
        # composed vector == word vector exactly
        model._sub_off = np.arange(len(words) + 1, dtype=np.int64)
        model._sub_ids = np.arange(len(words), dtype=np.int64)
        return model

    def save(self, path, provenance: Optional[str] = None) -> None:
        header = {
            "dim": self.dim,
            "vocab_size": len(self.words),
            "bucket_count": self.config.bucket_count,
            "config": asdict(self.config),
            "loss_history": self.loss_history,
        }
        if provenance:
            header["provenance"] = provenance
        hb = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            fh.write(np.ascontiguousarray(self.wi, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.wo, dtype="<f4").tobytes())
            vocab = "".join(f"{w}\t{c}\n" for w, c in zip(self.words, self.counts)).encode("utf-8")
            fh.write(struct.pack("<I", len(vocab)))
            fh.write(vocab)

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        with open(path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise ValueError(f"{path} is not an embedding model file")
            (hl,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hl).decode("utf-8"))
            dim, nv, nb = header["dim"], header["vocab_size"], header["bucket_count"]
            wi = np.frombuffer(fh.read(4 * (nv + nb) * dim), dtype="<f4").reshape(nv + nb, dim).copy()
            wo = np.frombuffer(fh.read(4 * nv * dim), dtype="<f4").reshape(nv, dim).copy()
            (vl,) = struct.unpack("<I", fh.read(4))
            lines = fh.read(vl).decode("utf-8").splitlines()
        words, counts = zip(*(ln.split("\t") for ln in lines)) if lines else ((), ())
        config = EmbedConfig(**header["config"])
        return cls(list(words), [int(c) for c in counts], wi, wo, config, header.get("loss_history"))

    def export_text(self, path) -> None:
        m = self.composed_matrix()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.words)} {self.dim}\n")
            for w, row in zip(self.words, m):
                fh.write(w + " " + " ".join(f"{x:.6f}" for x in row) + "\n")


def _subword_table(words: Sequence[str], cfg: EmbedConfig):
    off = [0]
    ids: list[int] = []
    nw = len(words)
    for i, w in enumerate(words):
        ids.append(i)
        ids.extend(nw + fnv1a(g) % cfg.bucket_count for g in char_ngrams(w, cfg.subword_min, cfg.subword_max))
        off.append(len(ids))
    return np.array(off, dtype=np.int64), np.array(ids, dtype=np.int64)


def _encode(corpus: StanceCorpus, index: dict):
    toks, off = [], [0]
    for seq in corpus.token_sequences:
        ids = [index[t] for t in seq if t in index]
        if ids:
            toks.extend(ids)
            off.append(len(toks))
    return np.array(toks, dtype=np.int64), np.array(off, dtype=np.int64)


def _probe_batch(tokens, sent_off, neg_table, window, n_neg, rng, size=512):
    """Fixed (center, context, negatives) triples for loss monitoring."""
    triples = []
    nsent = len(sent_off) - 1
    tries = 0
    while len(triples) < size and tries < size * 20:
        tries += 1
        s = rng.integers(nsent)
        a, b = sent_off[s], sent_off[s + 1]
        if b - a < 2:
            continue
        i = rng.integers(a, b)
        j = i
        while j == i:
            j = rng.integers(max(a, i - window), min(b, i + window + 1))
        negs = neg_table[rng.integers(len(neg_table), size=n_neg)]
        triples.append((tokens[i], tokens[j], negs))
    return triples


def probe_loss(model: EmbeddingModel, triples) -> float:
    total = 0.0
    for c, t, negs in triples:
        rows = model.wi[model._sub_ids[model._sub_off[c]:model._sub_off[c + 1]]].astype(np.float64)
        total += sgns_loss(rows, model.wo[t].astype(np.float64), model.wo[negs].astype(np.float64))
    return total / max(len(triples), 1)


def train_embeddings(corpus: StanceCorpus, config: EmbedConfig) -> EmbeddingModel:
    """Fit skip-gram negative-sampling vectors with subword composition.

    Deterministic for a fixed seed when ``config.workers == 1``. The model's
    ``loss_history`` holds the mean loss on a fixed probe batch after each epoch.
    """
    config.validate()
    if corpus.token_count == 0:
        raise ValueError("corpus is empty")
    counts = Counter()
    for seq in corpus.token_sequences:
        counts.update(seq)
    kept = sorted(((w, c) for w, c in counts.items() if c >= config.min_count), key=lambda kv: (-kv[1], kv[0]))
    if not kept:
        raise ValueError(f"empty vocabulary after min_count={config.min_count} filtering")
    words = [w for w, _ in kept]
    freq = np.array([c for _, c in kept], dtype=np.int64)
    index = {w: i for i, w in enumerate(words)}
    tokens, sent_off = _encode(corpus, index)
    ntokens = len(tokens)

    rng = np.random.default_rng(config.seed)
    nw, dim = len(words), config.dim
    wi = rng.uniform(-1.0 / dim, 1.0 / dim, size=(nw + config.bucket_count, dim)).astype(np.float32)
    wo = np.zeros((nw, dim), dtype=np.float32)

    pw = freq.astype(np.float64) ** 0.75
    reps = np.maximum(np.round(pw / pw.sum() * _NEG_TABLE_SIZE), 1).astype(np.int64)
    neg_table = np.repeat(np.arange(nw, dtype=np.int64), reps)
    f = freq / ntokens
    pdiscard = np.sqrt(config.sample / f) + config.sample / f if config.sample > 0 else np.ones(nw)

    model = EmbeddingModel(words, freq, wi, wo, config)
    probe = _probe_batch(tokens, sent_off, neg_table, config.window, config.negatives,
                         np.random.default_rng(config.seed + 7919))
    total = float(config.epochs * ntokens)
    nsent = len(sent_off) - 1
    history = []
    for epoch in range(config.epochs):
        done0 = float(epoch * ntokens)
        seed = int(rng.integers(2 ** 31 - 1))
        if config.workers == 1:
            _train_span(wi, wo, tokens, sent_off, 0, nsent, model._sub_off, model._sub_ids, neg_table,
                        pdiscard, config.window, config.negatives, config.learning_rate, done0, total, seed)
        else:
            bounds = np.linspace(0, nsent, config.workers + 1).astype(np.int64)
            seeds = rng.integers(2 ** 31 - 1, size=config.workers)
            _train_parallel(wi, wo, tokens, sent_off, bounds, model._sub_off, model._sub_ids, neg_table,
                            pdiscard, config.window, config.negatives, config.learning_rate, done0, total,
                            seeds)
        history.append(probe_loss(model, probe))
        logger.debug("epoch %d probe loss %.4f", epoch + 1, history[-1])
    if not np.all(np.isfinite(wi)) or not np.all(np.isfinite(wo)):
        raise FloatingPointError("non-finite parameters after training")
    model.loss_history = history
    return model


def vector(model: EmbeddingModel, word: str) -> np.ndarray:
    """Composed vector of ``word``; OOV words use their n-grams alone."""
    ids = model.subword_ids(word)
    if len(ids) == 0:
        raise KeyError(f"cannot compose a vector for {word!r}: not in vocabulary and no character n-grams")
    return model.wi[ids].astype(np.float64).mean(axis=0)


def nearest_neighbors(model: EmbeddingModel, query: np.ndarray, k: int,
                      exclude: Optional[str] = None) -> list[tuple[str, float]]:
    """Exact cosine neighbors over the vocabulary, ties broken by vocab index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("query vector has zero norm; cosine undefined")
    sims = model.unit_matrix() @ (q / norm)
    order = np.argsort(-sims, kind="stable")
    out = []
    for i in order:
        w = model.words[i]
        if w == exclude:
            continue
        out.append((w, float(sims[i])))
        if len(out) == k:
            break
    return out
