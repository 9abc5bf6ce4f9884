"""News-consumption polarization: audience ratios, relative entropy,
Markov transitions between media clusters and summary mobility indices."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class RetweetEvent:
    user_id: str
    media_id: str
    timestamp: float
    tweet_id: str = ""
    stance: Optional[str] = None


@dataclass
class ConsumptionProfile:
    media_id: str
    n_pro: int
    n_anti: int

    @property
    def p_pro(self) -> float:
        return self.n_pro / (self.n_pro + self.n_anti)


def retweet_ratio(media_id: str, retweets: Iterable[RetweetEvent]) -> Optional[ConsumptionProfile]:
    """Share of the outlet's retweets made by pro-government users.

    Only events whose stance is "pro" or "anti" count; returns None when the
    outlet has no such retweets.
    """
    n_pro = n_anti = 0
    for ev in retweets:
        if ev.media_id != media_id:
            continue
        if ev.stance == "pro":
            n_pro += 1
        elif ev.stance == "anti":
            n_anti += 1
    if n_pro + n_anti == 0:
        return None
    return ConsumptionProfile(media_id, n_pro, n_anti)


def consumption_profiles(events: Iterable[RetweetEvent]) -> tuple[list[ConsumptionProfile], int]:
    """Profiles for every outlet with labeled retweets, plus the count excluded."""
    pro: dict[str, int] = defaultdict(int)
    anti: dict[str, int] = defaultdict(int)
    media = set()
    for ev in events:
        media.add(ev.media_id)
        if ev.stance == "pro":
            pro[ev.media_id] += 1
        elif ev.stance == "anti":
            anti[ev.media_id] += 1
    profiles = [ConsumptionProfile(m, pro[m], anti[m]) for m in sorted(media) if pro[m] + anti[m] > 0]
    return profiles, len(media) - len(profiles)


def _xlogy(x: float, y: float) -> float:
    return 0.0 if x == 0 else x * math.log(y)


def relative_entropy(p_pro: float, g_pro: float) -> float:
    """H = -p log(p/g) - (1-p) log((1-p)/(1-g)) in nats, with 0 log 0 = 0.

    The negative Bernoulli KL divergence of the outlet's audience from the
    country baseline; 0 means a proportional audience.
    """
    if not 0.0 < g_pro < 1.0:
        raise ValueError(f"baseline g_pro={g_pro} must lie strictly between 0 and 1")
    if not 0.0 <= p_pro <= 1.0:
        raise ValueError(f"p_pro={p_pro} outside [0, 1]")
    if p_pro == g_pro:
        return 0.0
    q = 1.0 - p_pro
    h = -(_xlogy(p_pro, p_pro / g_pro if p_pro else 1.0) + _xlogy(q, q / (1.0 - g_pro) if q else 1.0))
    return min(h, 0.0)


def country_baseline(user_stances: Mapping[str, str], users: Optional[Iterable[str]] = None) -> float:
    """Pro share among consistent users, optionally restricted to ``users``."""
    pool = user_stances if users is None else {u: user_stances.get(u) for u in users}
    n_pro = sum(1 for s in pool.values() if s == "pro")
    n_anti = sum(1 for s in pool.values() if s == "anti")
    if n_pro + n_anti == 0:
        raise ValueError("no consistently labeled users for the baseline")
    return n_pro / (n_pro + n_anti)


@dataclass
class EntropyReport:
    g_pro: float
    entropy: dict[str, float] = field(default_factory=dict)
    profiles: dict[str, ConsumptionProfile] = field(default_factory=dict)


def entropy_report(profiles: Sequence[ConsumptionProfile], g_pro: float) -> EntropyReport:
    rep = EntropyReport(g_pro)
    for p in profiles:
        rep.profiles[p.media_id] = p
        rep.entropy[p.media_id] = relative_entropy(p.p_pro, g_pro)
    return rep


@dataclass
class TransitionModel:
    states: list
    counts: np.ndarray

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def undefined_rows(self) -> list[int]:
        return [i for i in range(self.n) if self.counts[i].sum() == 0]

    @property
    def P(self) -> np.ndarray:
        """Row-normalized counts; rows without observations are NaN."""
        tot = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, self.counts / tot, np.nan)


def user_sequences(events: Iterable[RetweetEvent], cluster_of: Mapping[str, int]) -> dict[str, list[int]]:
    """Per-user state sequences ordered by (timestamp, tweet_id).

    Retweets of media outside ``cluster_of`` are dropped.
    """
    per_user: dict[str, list[tuple]] = defaultdict(list)
    for ev in events:
        s = cluster_of.get(ev.media_id)
        if s is not None:
            per_user[ev.user_id].append((ev.timestamp, ev.tweet_id, s))
    return {u: [s for _, _, s in sorted(seq)] for u, seq in sorted(per_user.items())}


def count_transitions(sequences: Iterable[Sequence[int]], n_states: int) -> np.ndarray:
    counts = np.zeros((n_states, n_states), dtype=np.int64)
    for seq in sequences:
        if len(seq) >= 2:
            a = np.asarray(seq[:-1])
            b = np.asarray(seq[1:])
            np.add.at(counts, (a, b), 1)
    return counts


def build_transitions(events: Iterable[RetweetEvent], cluster_of: Mapping[str, int],
                      n_states: Optional[int] = None, labels: Optional[Sequence] = None) -> TransitionModel:
    """Pooled first-order transition counts over users' retweet histories.

    Chains never cross users; users with a single clustered retweet add nothing.
    """
    if n_states is None:
        n_states = max(cluster_of.values(), default=-1) + 1
    seqs = user_sequences(events, cluster_of)
    if not any(len(s) >= 2 for s in seqs.values()):
        raise ValueError("no user has two or more clustered retweets")
    counts = count_transitions(seqs.values(), n_states)
    return TransitionModel(list(labels) if labels is not None else list(range(n_states)), counts)


@dataclass
class MobilityIndices:
    IR: float
    ML: float
    MR: float


def mobility_indices(P) -> MobilityIndices:
    """Immobility ratio and upward/downward mobility of a transition matrix.

    IR averages the diagonal, ML the mass above it (i < j, toward the
    higher-numbered state) and MR the mass below it, each divided by n.
    """
    if isinstance(P, TransitionModel):
        P = P.P
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.isnan(P).any():
        bad = sorted(set(np.argwhere(np.isnan(P))[:, 0].tolist()))
        raise ValueError(f"transition rows {bad} are undefined")
    n = P.shape[0]
    return MobilityIndices(
        IR=float(np.trace(P) / n),
        ML=float(np.triu(P, 1).sum() / n),
        MR=float(np.tril(P, -1).sum() / n),
    )


def ratio_histogram(values, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width bins over [0, 1]; bins are half-open except the last."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    vals = [v.p_pro if isinstance(v, ConsumptionProfile) else float(v) for v in values]
    counts, edges = np.histogram(np.asarray(vals, dtype=np.float64), bins=bins, range=(0.0, 1.0))
    return counts, edges


def _comment(fh, header: Optional[str]) -> None:
    if header:
        fh.write("# " + header + "\n")


def write_entropy_csv(path, report: EntropyReport, header: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _comment(fh, header)
        w = csv.writer(fh)
        w.writerow(["media", "n_pro", "n_anti", "p_pro", "H"])
        for m in sorted(report.profiles):
            p = report.profiles[m]
            w.writerow([m, p.n_pro, p.n_anti, f"{p.p_pro:.6f}", f"{report.entropy[m]:.6f}"])


def write_transition_csv(path, model: TransitionModel, header: Optional[str] = None) -> None:
    P = model.P
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _comment(fh, header)
        w = csv.writer(fh)
        w.writerow(["from"] + [f"to_{s}" for s in model.states] + [f"count_to_{s}" for s in model.states])
        for i, s in enumerate(model.states):
            w.writerow([s] + ["" if np.isnan(x) else f"{x:.6f}" for x in P[i]] + list(model.counts[i]))


def write_histogram_csv(path, counts, edges, header: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _comment(fh, header)
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([f"{lo:.6f}", f"{hi:.6f}", int(c)])
