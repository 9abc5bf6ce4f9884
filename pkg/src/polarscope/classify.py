"""Protest relevance of news tweets.

URL rules give weak labels (an explicit URL list, then section keywords in
the URL path); a small convolutional text classifier over frozen word
embeddings extends them to unlabeled tweets.

The network: per filter width a 1-D convolution over the token vectors,
ReLU and max-pooling over time; the pooled features of all widths are
concatenated, passed through (inverted) dropout and a dense 2-way softmax.
Forward and backward passes are written out by hand in numpy.
"""

from __future__ import annotations

import json
import logging
import struct
import unicodedata
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence
from urllib.parse import urlsplit

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import tokenize
from .embed import EmbeddingModel, vector

logger = logging.getLogger(__name__)

RELEVANT, IRRELEVANT, UNKNOWN = "relevant", "irrelevant", "unknown"
PAD = "<pad>"
DEFAULT_SECTIONS = ("deportes", "sports", "cultura", "culture", "tecnologia", "technology")


def _fold(s: str) -> str:
    s = unicodedata.normalize("NFKD", s.lower())
    return "".join(c for c in s if not unicodedata.combining(c))


@dataclass
class UrlLabelRule:
    labels: dict[str, str] = field(default_factory=dict)
    irrelevant_sections: tuple = DEFAULT_SECTIONS

    def __post_init__(self):
        for url, lab in self.labels.items():
            if lab not in (RELEVANT, IRRELEVANT):
                raise ValueError(f"label {lab!r} for {url} must be relevant or irrelevant")

    @classmethod
    def read_csv(cls, path, irrelevant_sections: Sequence[str] = DEFAULT_SECTIONS) -> "UrlLabelRule":
        import csv

        labels: dict[str, str] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                url, lab = row["url"].strip(), row["label"].strip().lower()
                if labels.get(url, lab) != lab:
                    raise ValueError(f"URL {url} carries two labels")
                labels[url] = lab
        return cls(labels, tuple(irrelevant_sections))


def url_label(url: str, rules: UrlLabelRule) -> str:
    """Explicit label first, then an irrelevant section keyword as a path segment."""
    if url in rules.labels:
        return rules.labels[url]
    sections = {_fold(s) for s in rules.irrelevant_sections}
    segments = [_fold(s) for s in urlsplit(url).path.split("/") if s]
    if any(s in sections for s in segments):
        return IRRELEVANT
    return UNKNOWN


def _as_label(y) -> int:
    if isinstance(y, str):
        y = y.strip().lower()
        if y in (RELEVANT, "1"):
            return 1
        if y in (IRRELEVANT, "0"):
            return 0
        raise ValueError(f"unknown label {y!r}")
    return int(bool(y))


@dataclass
class DedupeResult:
    examples: list[tuple[int, str]]
    duplicates: int = 0
    conflicts: int = 0

    def __iter__(self):
        return iter(self.examples)

    def __len__(self) -> int:
        return len(self.examples)


def dedupe_texts(examples: Iterable[tuple]) -> DedupeResult:
    """One example per normalized text; texts seen with both labels are dropped."""
    first: dict[str, tuple[int, str]] = {}
    labels: dict[str, set] = {}
    dups = 0
    for y, text in examples:
        key = " ".join(tokenize(text))
        y = _as_label(y)
        if key in first:
            dups += 1
        else:
            first[key] = (y, text)
        labels.setdefault(key, set()).add(y)
    conflicts = sum(1 for v in labels.values() if len(v) > 1)
    kept = [ex for k, ex in first.items() if len(labels[k]) == 1]
    if conflicts:
        logger.info("dropped %d texts with conflicting labels", conflicts)
    return DedupeResult(kept, dups, conflicts)


def read_labeled_tsv(path) -> list[tuple[int, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            y, _, text = line.partition("\t")
            out.append((_as_label(y), text))
    return out


@dataclass
class CnnConfig:
    embed_dim: int = 300
    filters_per_width: int = 100
    filter_widths: tuple = (3, 4, 5)
    dropout: float = 0.5
    max_sequence: int = 64
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"

    def validate(self) -> None:
        if not self.filter_widths or any(int(w) < 1 for w in self.filter_widths):
            raise ValueError("filter widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.embed_dim < 1 or self.filters_per_width < 1 or self.max_sequence < 1:
            raise ValueError("embed_dim, filters_per_width and max_sequence must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")


@dataclass
class CnnModel:
    config: CnnConfig
    filters: dict[int, np.ndarray]  # width -> (width, embed_dim, filters)
    biases: dict[int, np.ndarray]  # width -> (filters,)
    W: np.ndarray  # (n_features, 2)
    b: np.ndarray  # (2,)
    embedding_fingerprint: str = ""
    history: list[float] = field(default_factory=list)

    @property
    def widths(self) -> list[int]:
        return sorted(self.filters)

    def params(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array."""
        out = {}
        for w in self.widths:
            out[f"filter_{w}"] = self.filters[w]
            out[f"bias_{w}"] = self.biases[w]
        out["W"] = self.W
        out["b"] = self.b
        return out

    def save(self, path, provenance: Optional[str] = None) -> None:
        params = self.params()
        header = {
            "version": 1,
            "config": asdict(self.config),
            "embedding_fingerprint": self.embedding_fingerprint,
            "arrays": [[k, list(v.shape)] for k, v in params.items()],
        }
        if provenance:
            header["provenance"] = provenance
        hb = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(b"PSCNN001")
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            for v in params.values():
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "CnnModel":
        with open(path, "rb") as fh:
            if fh.read(8) != b"PSCNN001":
                raise ValueError(f"{path} is not a classifier model file")
            (n,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(n).decode("utf-8"))
            arrays = {}
            for name, shape in header["arrays"]:
                size = int(np.prod(shape))
                arrays[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        cfg = header["config"]
        cfg["filter_widths"] = tuple(cfg["filter_widths"])
        config = CnnConfig(**cfg)
        widths = sorted(int(w) for w in config.filter_widths)
        return cls(config, {w: arrays[f"filter_{w}"] for w in widths}, {w: arrays[f"bias_{w}"] for w in widths},
                   arrays["W"], arrays["b"], header["embedding_fingerprint"])


def init_model(cfg: CnnConfig, rng: np.random.Generator) -> CnnModel:
    cfg.validate()
    widths = sorted(int(w) for w in cfg.filter_widths)
    d, F = cfg.embed_dim, cfg.filters_per_width
    filters = {w: rng.normal(0.0, np.sqrt(2.0 / (w * d)), size=(w, d, F)) for w in widths}
    biases = {w: np.full(F, 0.01) for w in widths}
    n_feat = F * len(widths)
    W = rng.normal(0.0, np.sqrt(1.0 / n_feat), size=(n_feat, 2))
    return CnnModel(cfg, filters, biases, W, np.zeros(2))


# ---------------------------------------------------------------- encoding

class TokenEncoder:
    """Token list -> (n, dim) matrix of frozen embedding vectors.

    Pad tokens and words without any vector are dropped, so the remaining
    tokens are compacted to the left; the result is truncated to
    ``max_sequence`` rows.
    """

    def __init__(self, embeddings: EmbeddingModel, max_sequence: int):
        self.embeddings = embeddings
        self.max_sequence = max_sequence
        self._cache: dict[str, Optional[np.ndarray]] = {}

    def _vec(self, tok: str) -> Optional[np.ndarray]:
        if tok not in self._cache:
            try:
                self._cache[tok] = np.asarray(vector(self.embeddings, tok), dtype=np.float64)
            except KeyError:
                self._cache[tok] = None
        return self._cache[tok]

    def encode_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        rows = [v for v in (self._vec(t) for t in tokens if t != PAD) if v is not None]
        rows = rows[: self.max_sequence]
        if not rows:
            return np.zeros((0, self.embeddings.dim))
        return np.stack(rows)

    def encode(self, text: str) -> np.ndarray:
        return self.encode_tokens(tokenize(text))


def pad_batch(seqs: Sequence[np.ndarray], min_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack left-aligned sequences into (B, L, d) with zero rows after each."""
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
    L = max(int(lengths.max(initial=0)), min_len)
    d = seqs[0].shape[1]
    E = np.zeros((len(seqs), L, d))
    for i, s in enumerate(seqs):
        E[i, : s.shape[0]] = s
    return E, lengths


# ---------------------------------------------------------------- network

@dataclass
class _Cache:
    windows: dict
    argmax: dict
    pooled: dict
    features: np.ndarray
    mask: Optional[np.ndarray]
    dropped: np.ndarray
    probs: np.ndarray


def _conv_pool(E: np.ndarray, lengths: np.ndarray, filt: np.ndarray, bias: np.ndarray):
    w = filt.shape[0]
    win = sliding_window_view(E, w, axis=1)  # (B, P, d, w)
    win = np.moveaxis(win, -1, 2)  # (B, P, w, d)
    conv = np.tensordot(win, filt, axes=([2, 3], [0, 1])) + bias  # (B, P, F)
    # a window may start at p only if it lies inside the text; short texts keep p = 0
    last = np.maximum(lengths - w, 0)
    valid = np.arange(conv.shape[1])[None, :] <= last[:, None]
    conv = np.where(valid[:, :, None], conv, -np.inf)
    idx = conv.argmax(axis=1)  # (B, F)
    pooled = np.take_along_axis(conv, idx[:, None, :], axis=1)[:, 0, :]
    return win, idx, pooled


def forward(model: CnnModel, E: np.ndarray, lengths: np.ndarray, train: bool = False,
            rng: Optional[np.random.Generator] = None) -> _Cache:
    cfg = model.config
    wmax = max(model.widths)
    if E.shape[1] < wmax:
        E = np.concatenate([E, np.zeros((E.shape[0], wmax - E.shape[1], E.shape[2]))], axis=1)
    windows, argmax, pooled, feats = {}, {}, {}, []
    for w in model.widths:
        win, idx, pool = _conv_pool(E, lengths, model.filters[w], model.biases[w])
        windows[w], argmax[w], pooled[w] = win, idx, pool
        feats.append(np.maximum(pool, 0.0))
    h = np.concatenate(feats, axis=1)
    mask = None
    z = h
    if train and cfg.dropout > 0:
        keep = 1.0 - cfg.dropout
        mask = (rng.random(h.shape) < keep) / keep
        z = h * mask
    logits = z @ model.W + model.b
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return _Cache(windows, argmax, pooled, h, mask, z, p)


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))))


def backward(model: CnnModel, cache: _Cache, y: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy w.r.t. every parameter."""
    B = len(y)
    dlog = cache.probs.copy()
    dlog[np.arange(B), y] -= 1.0
    dlog /= B
    grads = {"W": cache.dropped.T @ dlog, "b": dlog.sum(axis=0)}
    dz = dlog @ model.W.T
    dh = dz * cache.mask if cache.mask is not None else dz
    F = model.config.filters_per_width
    for k, w in enumerate(model.widths):
        pool = cache.pooled[w]
        dpool = dh[:, k * F:(k + 1) * F] * (pool > 0)
        win = cache.windows[w]  # (B, P, w, d)
        idx = cache.argmax[w]  # (B, F)
        picked = win[np.arange(B)[:, None], idx]  # (B, F, w, d)
        grads[f"filter_{w}"] = np.einsum("bfwd,bf->wdf", picked, dpool)
        grads[f"bias_{w}"] = dpool.sum(axis=0)
    return grads


def loss_and_grads(model: CnnModel, E: np.ndarray, lengths: np.ndarray, y: np.ndarray,
                   train: bool = False, rng=None) -> tuple[float, dict[str, np.ndarray]]:
    cache = forward(model, E, lengths, train, rng)
    return cross_entropy(cache.probs, y), backward(model, cache, y)


def batch_loss(model: CnnModel, E: np.ndarray, lengths: np.ndarray, y: np.ndarray) -> float:
    return cross_entropy(forward(model, E, lengths).probs, y)


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1 ** self.t)
            vh = v / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def _check_examples(examples) -> tuple[list[str], np.ndarray]:
    texts = [t for _, t in examples]
    y = np.array([_as_label(lab) for lab, _ in examples], dtype=np.int64)
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise ValueError(f"need at least 2 examples per class, got {counts[1]} relevant / {counts[0]} irrelevant")
    return texts, y


def encode_examples(texts: Sequence[str], encoder: TokenEncoder) -> tuple[list[np.ndarray], list[int]]:
    """Encoded texts plus the indices of texts that encode to nothing."""
    seqs, empty = [], []
    for i, t in enumerate(texts):
        s = encoder.encode(t)
        if s.shape[0] == 0:
            empty.append(i)
        seqs.append(s)
    return seqs, empty


def train_cnn(examples: Sequence[tuple], embeddings: EmbeddingModel, cfg: Optional[CnnConfig] = None,
              callback: Optional[Callable[[int, CnnModel, float], bool]] = None) -> CnnModel:
    """Mini-batch training with cross-entropy; embeddings stay frozen.

    ``callback(epoch, model, loss)`` runs after every epoch and may return True
    to stop early. Examples that encode to no tokens are skipped.
    """
    cfg = cfg or CnnConfig()
    cfg.validate()
    if embeddings.dim != cfg.embed_dim:
        raise ValueError(f"embedding dim {embeddings.dim} != embed_dim {cfg.embed_dim}")
    texts, y = _check_examples(examples)
    encoder = TokenEncoder(embeddings, cfg.max_sequence)
    seqs, empty = encode_examples(texts, encoder)
    if empty:
        logger.warning("skipping %d examples with no embeddable tokens", len(empty))
        keep = [i for i in range(len(seqs)) if i not in set(empty)]
        seqs, y = [seqs[i] for i in keep], y[keep]
        if np.bincount(y, minlength=2).min() < 2:
            raise ValueError("a class has fewer than 2 usable examples")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg, rng)
    model.embedding_fingerprint = embeddings.fingerprint()
    params = model.params()
    opt = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None
    wmax = max(model.widths)
    n = len(seqs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            bi = order[s:s + cfg.batch_size]
            E, lengths = pad_batch([seqs[i] for i in bi], wmax)
            loss, grads = loss_and_grads(model, E, lengths, y[bi], train=True, rng=rng)
            total += loss * len(bi)
            if opt is None:
                for k, g in grads.items():
                    params[k] -= cfg.learning_rate * g
            else:
                opt.step(params, grads)
        model.history.append(total / n)
        if callback is not None and callback(epoch, model, total / n):
            break
    return model


def predict_encoded(model: CnnModel, seqs: Sequence[np.ndarray]) -> np.ndarray:
    """(B, 2) class probabilities [irrelevant, relevant]; no dropout."""
    if not seqs:
        return np.zeros((0, 2))
    E, lengths = pad_batch(list(seqs), max(model.widths))
    return forward(model, E, lengths).probs


class EmptyInputError(ValueError):
    pass


def predict(model: CnnModel, text: str, embeddings: EmbeddingModel) -> float:
    """Probability that ``text`` is protest-relevant."""
    seq = TokenEncoder(embeddings, model.config.max_sequence).encode(text)
    if seq.shape[0] == 0:
        raise EmptyInputError(f"no usable tokens in {text!r}")
    return float(predict_encoded(model, [seq])[0, 1])


def predict_many(model: CnnModel, texts: Sequence[str], embeddings: EmbeddingModel,
                 batch_size: int = 256) -> np.ndarray:
    """Relevance probabilities; NaN for texts without usable tokens."""
    enc = TokenEncoder(embeddings, model.config.max_sequence)
    out = np.full(len(texts), np.nan)
    seqs = [enc.encode(t) for t in texts]
    ok = [i for i, s in enumerate(seqs) if s.shape[0] > 0]
    for s in range(0, len(ok), batch_size):
        chunk = ok[s:s + batch_size]
        out[chunk] = predict_encoded(model, [seqs[i] for i in chunk])[:, 1]
    return out


@dataclass
class Metrics:
    accuracy: float
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def confusion(self) -> np.ndarray:
        """Rows are true labels, columns predictions, both ordered [irrelevant, relevant]."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]])


def metrics_from_predictions(y_true: Sequence[int], y_pred: Sequence[int]) -> Metrics:
    yt = np.asarray(y_true, dtype=np.int64)
    yp = np.asarray(y_pred, dtype=np.int64)
    tp = int(((yt == 1) & (yp == 1)).sum())
    fp = int(((yt == 0) & (yp == 1)).sum())
    fn = int(((yt == 1) & (yp == 0)).sum())
    tn = int(((yt == 0) & (yp == 0)).sum())
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return Metrics((tp + tn) / len(yt), f1, prec, rec, tp, fp, fn, tn)


def evaluate(model: CnnModel, test_set: Sequence[tuple], embeddings: EmbeddingModel) -> Metrics:
    """Accuracy, relevant-class F1 and confusion counts at threshold 0.5."""
    if not test_set:
        raise ValueError("empty test set")
    y = np.array([_as_label(lab) for lab, _ in test_set], dtype=np.int64)
    if len(set(y.tolist())) < 2:
        raise ValueError("test set must contain both classes")
    probs = [predict(model, t, embeddings) for _, t in test_set]
    return metrics_from_predictions(y, (np.asarray(probs) >= 0.5).astype(np.int64))
