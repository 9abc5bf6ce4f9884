"""User-media bipartite graphs, shared-audience projection, Louvain
clustering of outlets and user-user response networks."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .corpus import Tweet

logger = logging.getLogger(__name__)

CONSISTENT = ("consistent_pro_government", "consistent_anti_government")


@dataclass(frozen=True)
class MediaOutlet:
    media_user_id: str
    name: str = ""
    handle: str = ""
    domain: str = ""
    country: str = ""
    bloc: str = ""


def read_media_registry(path) -> dict[str, MediaOutlet]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            rec = MediaOutlet(**{k: (row.get(k) or "").strip() for k in MediaOutlet.__dataclass_fields__})
            if not rec.media_user_id:
                continue
            out[rec.media_user_id] = rec
    return out


@dataclass
class BipartiteGraph:
    users: list[str]
    media: list[str]
    M: sp.csr_matrix
    retweet_counts: sp.csr_matrix

    @property
    def n_edges(self) -> int:
        return int(self.M.nnz)

    def node_rows(self):
        return [(u, {"part": "user"}) for u in self.users] + [(m, {"part": "media"}) for m in self.media]

    def edge_rows(self):
        coo = self.M.tocoo()
        cnt = self.retweet_counts.tocsr()
        rows = [(self.users[i], self.media[j], {"weight": 1, "retweets": int(cnt[i, j])})
                for i, j in zip(coo.row, coo.col)]
        return sorted(rows, key=lambda r: (r[0], r[1]))


def build_bipartite(tweets: Iterable[Tweet], media: Iterable[str],
                    relevance: Optional[Callable[[Tweet], bool]] = None) -> BipartiteGraph:
    """Edge (u, m) iff user u retweeted at least one relevant tweet by outlet m."""
    media_set = set(media)
    if not media_set:
        raise ValueError("media registry is empty")
    counts: dict[tuple[str, str], int] = defaultdict(int)
    for t in tweets:
        if t.retweeted_user_id in media_set and (relevance is None or relevance(t)):
            counts[(t.user_id, t.retweeted_user_id)] += 1
    users = sorted({u for u, _ in counts})
    media_list = sorted(media_set)
    ui = {u: i for i, u in enumerate(users)}
    mi = {m: j for j, m in enumerate(media_list)}
    rows = [ui[u] for u, _ in counts]
    cols = [mi[m] for _, m in counts]
    shape = (len(users), len(media_list))
    C = sp.csr_matrix((list(counts.values()), (rows, cols)), shape=shape, dtype=np.int64)
    M = sp.csr_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=shape)
    return BipartiteGraph(users, media_list, M, C)


@dataclass
class MediaProjection:
    media: list[str]
    W: sp.csr_matrix

    def weight(self, a: str, b: str) -> int:
        i, j = self.media.index(a), self.media.index(b)
        return int(self.W[i, j])

    def node_rows(self):
        return [(m, {}) for m in self.media]

    def edge_rows(self):
        coo = sp.triu(self.W, 1).tocoo()
        rows = [(self.media[i], self.media[j], {"weight": int(w)}) for i, j, w in zip(coo.row, coo.col, coo.data)]
        return sorted(rows, key=lambda r: (r[0], r[1]))


def project_media(g: BipartiteGraph, min_shared: int = 1, media: Optional[Sequence[str]] = None) -> MediaProjection:
    """Media graph weighted by the number of users two outlets share.

    ``media`` restricts the vertex set; by default every outlet with at least
    one user is kept.
    """
    W = (g.M.T @ g.M).tocsr().astype(np.int64)
    W.setdiag(0)
    W.eliminate_zeros()
    W.data[W.data < min_shared] = 0
    W.eliminate_zeros()
    if media is None:
        deg = np.asarray(g.M.sum(axis=0)).ravel()
        keep = [j for j in range(len(g.media)) if deg[j] > 0]
    else:
        pos = {m: j for j, m in enumerate(g.media)}
        keep = [pos[m] for m in media]
    W = W[keep][:, keep].tocsr()
    return MediaProjection([g.media[j] for j in keep], W)


@dataclass
class CommunityAssignment:
    membership: dict[str, int]
    modularity: float
    seed: int = 0
    resolution: float = 1.0

    @property
    def n_communities(self) -> int:
        return len(set(self.membership.values()))

    def communities(self) -> list[list[str]]:
        groups: dict[int, list[str]] = defaultdict(list)
        for v, c in self.membership.items():
            groups[c].append(v)
        return [sorted(groups[c]) for c in sorted(groups)]


def modularity(W, membership: Sequence[int], resolution: float = 1.0) -> float:
    """Q = (1/2m) sum_ij [A_ij - gamma k_i k_j / 2m] delta(c_i, c_j) for symmetric A."""
    A = sp.csr_matrix(W, dtype=np.float64)
    k = np.asarray(A.sum(axis=1)).ravel()
    two_m = k.sum()
    if two_m == 0:
        return 0.0
    c = np.asarray(membership)
    ncom = c.max() + 1
    S = sp.csr_matrix((np.ones(len(c)), (np.arange(len(c)), c)), shape=(len(c), ncom))
    internal = (S.T @ A @ S).diagonal().sum()
    tot = S.T @ k
    return float(internal / two_m - resolution * np.sum(tot ** 2) / two_m ** 2)


def _adjacency_lists(A: sp.csr_matrix):
    nbrs = []
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        nbrs.append(list(zip(A.indices[lo:hi].tolist(), A.data[lo:hi].tolist())))
    return nbrs


def _one_level(A: sp.csr_matrix, resolution: float, rng: np.random.Generator, tol: float):
    """Local moving phase. Returns community labels (0..k-1) and whether anything moved."""
    n = A.shape[0]
    k = np.asarray(A.sum(axis=1)).ravel()
    two_m = k.sum()
    m = two_m / 2.0
    nbrs = _adjacency_lists(A)
    comm = np.arange(n)
    tot = k.copy()
    moved_any = False
    while True:
        moved = False
        for i in rng.permutation(n):
            ci = comm[i]
            ki = k[i]
            tot[ci] -= ki
            links: dict[int, float] = {ci: 0.0}
            for j, w in nbrs[i]:
                if j != i:
                    cj = comm[j]
                    links[cj] = links.get(cj, 0.0) + w
            best_c = ci
            best_gain = (links[ci] - resolution * tot[ci] * ki / two_m) / m
            base = best_gain
            for c, kin in links.items():
                gain = (kin - resolution * tot[c] * ki / two_m) / m
                if gain > best_gain + 1e-15:
                    best_c, best_gain = c, gain
            if best_gain - base <= tol:
                best_c = ci
            tot[best_c] += ki
            if best_c != ci:
                comm[i] = best_c
                moved = True
                moved_any = True
        if not moved:
            break
    _, labels = np.unique(comm, return_inverse=True)
    return labels, moved_any


def louvain_partition(W, resolution: float = 1.0, seed: int = 0, tol: float = 1e-9) -> np.ndarray:
    """Two-phase Louvain on a symmetric weighted adjacency matrix."""
    A = sp.csr_matrix(W, dtype=np.float64)
    n = A.shape[0]
    if n == 0:
        raise ValueError("graph has no vertices")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    if A.sum() <= 0:
        raise ValueError("graph has zero total edge weight")
    rng = np.random.default_rng(seed)
    membership = np.arange(n)
    while True:
        labels, moved = _one_level(A, resolution, rng, tol)
        if not moved:
            break
        membership = labels[membership]
        k = labels.max() + 1
        S = sp.csr_matrix((np.ones(A.shape[0]), (np.arange(A.shape[0]), labels)), shape=(A.shape[0], k))
        A = (S.T @ A @ S).tocsr()
        if k == 1:
            break
    _, membership = np.unique(membership, return_inverse=True)
    return membership


def louvain(p: MediaProjection, resolution: float = 1.0, seed: int = 0) -> CommunityAssignment:
    """Cluster outlets by modularity maximization; community ids start at 0."""
    labels = louvain_partition(p.W, resolution, seed)
    q = modularity(p.W, labels, resolution) if len(p.media) > 1 else 0.0
    return CommunityAssignment({m: int(c) for m, c in zip(p.media, labels)}, q, seed, resolution)


@dataclass
class ResponseNetwork:
    stance: dict[str, str] = field(default_factory=dict)
    edges: dict[tuple[str, str, str], int] = field(default_factory=dict)

    def node_rows(self):
        return [(u, {"stance": self.stance[u]}) for u in sorted(self.stance)]

    def edge_rows(self):
        return [(a, b, {"type": t, "weight": c}) for (a, b, t), c in sorted(self.edges.items())]

    def homophily(self) -> tuple[float, float]:
        """Same-stance share of edges among consistent users, and the random-mixing baseline."""
        cons = {u: s for u, s in self.stance.items() if s in CONSISTENT}
        same = total = 0
        ends: dict[str, int] = defaultdict(int)
        for (a, b, _), c in self.edges.items():
            if a in cons and b in cons:
                total += c
                same += c * (cons[a] == cons[b])
                ends[cons[a]] += c
                ends[cons[b]] += c
        if total == 0:
            return float("nan"), float("nan")
        baseline = sum((v / (2 * total)) ** 2 for v in ends.values())
        return same / total, baseline


def build_response_network(tweets: Iterable[Tweet], stances: Mapping[str, str], consistent_only: bool = True,
                           ego: bool = False) -> ResponseNetwork:
    """Directed reply/quote network between users.

    ``consistent_only`` keeps only consistently labeled users. ``ego`` keeps
    every labeled user (inconsistent included) together with the unlabeled
    users they exchange replies or quotes with.
    """
    raw: dict[tuple[str, str, str], int] = defaultdict(int)
    for t in tweets:
        for target, kind in ((t.in_reply_to_user_id, "reply"), (t.quoted_user_id, "quote")):
            if target is not None and target != t.user_id:
                raw[(t.user_id, target, kind)] += 1

    def label(u):
        return stances.get(u, "unlabeled")

    labeled = {u for u, s in stances.items() if s not in ("other", "unlabeled", None)}
    if ego:
        keep_edges = {e: c for e, c in raw.items() if e[0] in labeled or e[1] in labeled}
    elif consistent_only:
        keep_edges = {e: c for e, c in raw.items() if label(e[0]) in CONSISTENT and label(e[1]) in CONSISTENT}
    else:
        keep_edges = dict(raw)
    nodes = {u for a, b, _ in keep_edges for u in (a, b)}
    if ego:
        nodes |= labeled
    elif consistent_only:
        nodes |= {u for u in stances if label(u) in CONSISTENT}
    return ResponseNetwork({u: label(u) for u in nodes}, dict(sorted(keep_edges.items())))


def export_graph(graph, path, fmt: str = "csv", node_attrs: Optional[Mapping[str, Mapping]] = None,
                 header: Optional[str] = None) -> None:
    """Write a graph as an edge-list CSV (plus a sibling node CSV) or GraphML.

    ``graph`` needs ``node_rows()`` and ``edge_rows()``; ``node_attrs`` maps an
    attribute name to a {node: value} dict merged into the node rows.
    """
    nodes = [(n, dict(a)) for n, a in graph.node_rows()]
    for name, values in (node_attrs or {}).items():
        for n, a in nodes:
            if n in values:
                a[name] = values[n]
    edges = graph.edge_rows()
    if fmt == "csv":
        ekeys = sorted({k for _, _, a in edges for k in a})
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write("# " + header + "\n")
            w = csv.writer(fh)
            w.writerow(["source", "target"] + ekeys)
            for u, v, a in edges:
                w.writerow([u, v] + [a.get(k, "") for k in ekeys])
        nkeys = sorted({k for _, a in nodes for k in a})
        npath = str(path)[:-4] + "_nodes.csv" if str(path).endswith(".csv") else str(path) + ".nodes.csv"
        with open(npath, "w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write("# " + header + "\n")
            w = csv.writer(fh)
            w.writerow(["id"] + nkeys)
            for n, a in nodes:
                w.writerow([n] + [a.get(k, "") for k in nkeys])
    elif fmt == "graphml":
        G = nx.MultiDiGraph() if isinstance(graph, ResponseNetwork) else nx.Graph()
        for n, a in nodes:
            G.add_node(n, **a)
        for u, v, a in edges:
            G.add_edge(u, v, **a)
        if header:
            G.graph["provenance"] = header
        nx.write_graphml(G, path)
    else:
        raise ValueError(f"unknown graph export format {fmt!r}")


def read_edge_csv(path) -> list[tuple[str, str, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        out = []
        for r in rows:
            u, v = r.pop("source"), r.pop("target")
            out.append((u, v, dict(r)))
    return out
