"""Orthogonal translation between two community embeddings.

Words of one community are mapped into the other's space with an orthogonal
matrix fitted on shared stop-word anchors; a word that lands nearest to
itself "translates to itself". The share of such words is the similarity
between the two communities; the rest are disagreed pairs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import StanceCorpus, subsample_corpus, top_k_vocab
from .embed import EmbedConfig, EmbeddingModel, nearest_neighbors, train_embeddings, vector

logger = logging.getLogger(__name__)


def load_stopwords(path=None) -> list[str]:
    """Stop-words from ``path`` (one per line) or the bundled Spanish list."""
    if path is None:
        text = resources.files("polarscope").joinpath("data/stopwords_es.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    out, seen = [], set()
    for line in text.splitlines():
        w = line.strip().lower()
        if w and not w.startswith("#") and w not in seen:
            seen.add(w)
            out.append(w)
    return out


@dataclass
class AnchorSet:
    words: list[str]

    def __len__(self) -> int:
        return len(self.words)


def build_anchor_set(candidates: Iterable[str], src: EmbeddingModel, tgt: EmbeddingModel) -> AnchorSet:
    """Candidates present in both vocabularies, deduplicated, order kept."""
    seen, out = set(), []
    for w in candidates:
        if w in seen or w not in src or w not in tgt:
            continue
        seen.add(w)
        out.append(w)
    return AnchorSet(out)


@dataclass
class TranslationMatrix:
    T: np.ndarray
    source_fingerprint: str = ""
    target_fingerprint: str = ""

    def orthogonality_error(self) -> float:
        return float(np.abs(self.T.T @ self.T - np.eye(self.T.shape[0])).max())


@dataclass
class TranslationResult:
    source: str
    translation: str
    is_self: bool
    cosine: float
    rank: int


@dataclass
class SimilarityReport:
    values: list[float]
    mean: float
    std: float
    n_runs: int
    eval_size: int
    forward: list[float] = field(default_factory=list)
    backward: list[float] = field(default_factory=list)
    disagreed: list[list[tuple]] = field(default_factory=list)
    missing_in_target: list[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["disagreed"] = [[list(p) for p in run] for run in self.disagreed]
        return d


def _unit_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=1, keepdims=True)
    n[n == 0] = 1.0
    return m / n


def procrustes(X: np.ndarray, Y: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Orthogonal T maximizing trace((XT)^T Y), i.e. sum of row-wise x_i T . y_i."""
    U, s, Vt = np.linalg.svd(X.T @ Y)
    if s.min() < tol:
        raise np.linalg.LinAlgError(
            f"anchor matrix is rank deficient: smallest singular value {s.min():.3g} < {tol:g}")
    return U @ Vt


def learn_translation(src: EmbeddingModel, tgt: EmbeddingModel, anchors: AnchorSet) -> TranslationMatrix:
    if len(set(anchors.words)) != len(anchors.words):
        raise ValueError("anchor set contains duplicates")
    if len(anchors) < src.dim:
        raise ValueError(f"{len(anchors)} anchors cannot determine a {src.dim}-dim translation "
                         f"(need at least {src.dim})")
    if src.dim != tgt.dim:
        raise ValueError("source and target dimensions differ")
    X = _unit_rows(np.stack([vector(src, w) for w in anchors.words]))
    Y = _unit_rows(np.stack([vector(tgt, w) for w in anchors.words]))
    T = procrustes(X, Y)
    return TranslationMatrix(T, src.fingerprint(), tgt.fingerprint())


def _csls_penalty(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    # mean cosine of each row of a to its k nearest rows of b
    sims = a @ b.T
    k = min(k, b.shape[0])
    top = np.partition(sims, -k, axis=1)[:, -k:]
    return top.mean(axis=1)


def translate_words(words: Sequence[str], tm: TranslationMatrix, src: EmbeddingModel, tgt: EmbeddingModel,
                    csls_k: int = 0) -> list[TranslationResult]:
    """Batch form of :func:`translate_word`; CSLS retrieval when ``csls_k > 0``."""
    if not words:
        return []
    Q = _unit_rows(np.stack([vector(src, w) for w in words])) @ tm.T
    if np.any(np.linalg.norm(Q, axis=1) == 0):
        raise ValueError("zero source vector; cosine undefined")
    Q = _unit_rows(Q)
    U = tgt.unit_matrix()
    sims = Q @ U.T
    scores = sims
    if csls_k > 0:
        src_all = _unit_rows(src.unit_matrix() @ tm.T)
        scores = 2 * sims - _csls_penalty(Q, U, csls_k)[:, None] - _csls_penalty(U, src_all, csls_k)[None, :]
    best = np.argmax(scores, axis=1)  # first maximum = lowest vocab index
    out = []
    nsrc = len(src)
    for w, j, row in zip(words, best, sims):
        t = tgt.words[j]
        out.append(TranslationResult(w, t, t == w, float(row[j]), src.index.get(w, nsrc)))
    return out


def translate_word(w: str, tm: TranslationMatrix, src: EmbeddingModel, tgt: EmbeddingModel) -> TranslationResult:
    """Nearest target word to the unit source vector of ``w`` mapped through ``tm``."""
    q = vector(src, w)
    q = (q / np.linalg.norm(q)) @ tm.T
    (t, cos), = nearest_neighbors(tgt, q, 1)
    return TranslationResult(w, t, t == w, cos, src.index.get(w, len(src)))


def _eval_results(src, tgt, tm, eval_vocab, csls_k=0) -> tuple[list[TranslationResult], int]:
    missing = sum(1 for w in eval_vocab if w not in tgt)
    if missing:
        logger.info("%d eval words absent from the target vocabulary; counted as non-self", missing)
    return translate_words(list(eval_vocab), tm, src, tgt, csls_k), missing


def similarity(src: EmbeddingModel, tgt: EmbeddingModel, tm: TranslationMatrix, eval_vocab: Sequence[str],
               csls_k: int = 0) -> float:
    """Fraction of ``eval_vocab`` whose translation is the word itself."""
    if not eval_vocab:
        raise ValueError("empty evaluation vocabulary")
    res, _ = _eval_results(src, tgt, tm, eval_vocab, csls_k)
    return sum(r.is_self for r in res) / len(res)


def disagreed_pairs(src: EmbeddingModel, tgt: EmbeddingModel, tm: TranslationMatrix, eval_vocab: Sequence[str],
                    k: int, csls_k: int = 0) -> list[TranslationResult]:
    """Non-self translations, most frequent source words first, at most ``k``."""
    if k <= 0 or not eval_vocab:
        return []
    res, _ = _eval_results(src, tgt, tm, eval_vocab, csls_k)
    bad = [r for r in res if not r.is_self]
    bad.sort(key=lambda r: r.rank)  # stable: eval order breaks rank ties
    return bad[:k]


class ExperimentRunError(RuntimeError):
    def __init__(self, run: int, cause: Exception):
        super().__init__(f"run {run} failed: {cause}")
        self.run = run


@dataclass
class ExperimentConfig:
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    eval_k: int = 5000
    n_runs: int = 6
    seed: int = 0
    csls_k: int = 0
    disagreed_k: int = 100

    def validate(self) -> None:
        self.embed.validate()
        if self.eval_k < 1:
            raise ValueError("eval_k must be >= 1")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")


def _one_run(a: StanceCorpus, b: StanceCorpus, cfg: ExperimentConfig, r: int, anchors: Sequence[str]):
    seed = cfg.seed + r
    if a.token_count > b.token_count:
        a = subsample_corpus(a, b.token_count, seed)
    elif b.token_count > a.token_count:
        b = subsample_corpus(b, a.token_count, seed)
    ma = train_embeddings(a, replace(cfg.embed, seed=cfg.embed.seed + 2 * r))
    mb = train_embeddings(b, replace(cfg.embed, seed=cfg.embed.seed + 2 * r + 1))
    eval_vocab = top_k_vocab([a, b], cfg.eval_k)
    anchor_set = build_anchor_set(anchors, ma, mb)
    fwd_tm = learn_translation(ma, mb, anchor_set)
    bwd_tm = learn_translation(mb, ma, anchor_set)
    fwd, miss_f = _eval_results(ma, mb, fwd_tm, eval_vocab, cfg.csls_k)
    bwd, miss_b = _eval_results(mb, ma, bwd_tm, eval_vocab, cfg.csls_k)
    s_f = sum(x.is_self for x in fwd) / len(fwd)
    s_b = sum(x.is_self for x in bwd) / len(bwd)
    bad = sorted((x for x in fwd if not x.is_self), key=lambda x: x.rank)[: cfg.disagreed_k]
    return s_f, s_b, bad, miss_f + miss_b, len(eval_vocab)


def run_polarization_experiment(corpus_a: StanceCorpus, corpus_b: StanceCorpus,
                                cfg: Optional[ExperimentConfig] = None,
                                anchors: Optional[Sequence[str]] = None) -> SimilarityReport:
    """Repeated size-matched similarity between two community corpora.

    Each run subsamples the larger corpus to the smaller one's token count
    (seed + run), trains both embeddings, aligns them on the anchor words and
    measures self-translation in both directions. A run's value is the mean
    of the two directions.
    """
    cfg = cfg or ExperimentConfig()
    cfg.validate()
    if corpus_a.token_count == 0 or corpus_b.token_count == 0:
        raise ValueError("both corpora must be nonempty")
    anchors = list(anchors) if anchors is not None else load_stopwords()
    rep = SimilarityReport([], 0.0, 0.0, cfg.n_runs, 0, config=asdict(cfg))
    for r in range(cfg.n_runs):
        try:
            s_f, s_b, bad, missing, n_eval = _one_run(corpus_a, corpus_b, cfg, r, anchors)
        except Exception as exc:
            raise ExperimentRunError(r, exc) from exc
        logger.info("run %d: forward %.4f backward %.4f", r, s_f, s_b)
        rep.forward.append(s_f)
        rep.backward.append(s_b)
        rep.values.append((s_f + s_b) / 2)
        rep.disagreed.append([(x.rank, x.source, x.translation, x.cosine) for x in bad])
        rep.missing_in_target.append(missing)
        rep.eval_size = n_eval
    vals = np.asarray(rep.values)
    rep.mean = float(vals.mean())
    rep.std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return rep
