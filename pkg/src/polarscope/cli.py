"""Command-line pipeline: each subcommand is one stage reading the outputs of
earlier stages from the output directory.

    polarscope synth  --out runs/demo
    polarscope ingest --config runs/demo/synth/config.json --out runs/demo
    ... stance, embed, align, classify, cluster, flow, report

Exit codes: 0 success, 1 usage or config error, 2 data error (including a
missing upstream stage), 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
import traceback
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .align import ExperimentConfig, ExperimentRunError, load_stopwords, run_polarization_experiment
from .classify import (IRRELEVANT, RELEVANT, UNKNOWN, CnnConfig, UrlLabelRule, dedupe_texts, evaluate,
                       predict_many, read_labeled_tsv, train_cnn, url_label)
from .config import ConfigError, RunConfig, load_config, parse_config
from .corpus import StanceCorpus, TweetStore, build_stance_corpus, ingest_tweets, tokenize
from .embed import train_embeddings
from .flow import (RetweetEvent, build_transitions, consumption_profiles, country_baseline, entropy_report,
                   mobility_indices, ratio_histogram, write_entropy_csv, write_histogram_csv,
                   write_transition_csv)
from .mediagraph import (build_bipartite, build_response_network, export_graph, louvain, modularity,
                         project_media, read_media_registry)
from .stance import (CATEGORIES, Category, HashtagLexicon, PoliticianRegistry, label_users,
                     read_descriptions_csv,
                     read_stance_csv, stance_distribution, write_stance_csv)
from .synth import gen_world, write_world

logger = logging.getLogger("polarscope")

STAGES = ("ingest", "stance", "embed", "align", "classify", "cluster", "flow", "synth", "report")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- context

class Context:
    def __init__(self, cfg: RunConfig, out: Path, stage: str):
        self.cfg = cfg
        self.out = out
        self.stage = stage

    @property
    def seed(self) -> int:
        return self.cfg.seed

    @property
    def country(self) -> Optional[str]:
        return self.cfg.country

    def provenance(self) -> str:
        s = f"polarscope {__version__} stage={self.stage} config={self.cfg.fingerprint()} seed={self.seed}"
        if self.country:
            s += f" country={self.country}"
        return s

    def dir(self, stage: Optional[str] = None) -> Path:
        d = self.out / (stage or self.stage)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def require(self, stage: str, name: str = "summary.json") -> Path:
        p = self.out / stage / name
        if not p.exists():
            raise DataError(f"{self.stage} requires {stage} output ({p} not found); run `polarscope {stage}` first")
        return p

    def need_path(self, name: str) -> Path:
        p = self.cfg.path(name)
        if p is None:
            raise ConfigError([f"paths.{name} is required by the {self.stage} stage"])
        return p

    def write_json(self, path: Path, obj: dict) -> None:
        doc = {"_provenance": self.provenance(), **obj}
        path.write_text(json.dumps(doc, ensure_ascii=False, indent=1, sort_keys=True, default=_jsonable) + "\n",
                        encoding="utf-8")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    return str(x)


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _write_csv(path: Path, header: str, cols: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + header + "\n")
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows(rows)


def _load_store(ctx: Context) -> TweetStore:
    return ingest_tweets(ctx.require("ingest", "tweets.jsonl"))


def _stance_map(ctx: Context) -> dict[str, str]:
    """user -> pro | anti | inconsistent | other from the stance stage."""
    recs = read_stance_csv(ctx.require("stance", "users.csv"))
    short = {Category.CONSISTENT_PRO: "pro", Category.CONSISTENT_ANTI: "anti",
             Category.INCONSISTENT: "inconsistent", Category.OTHER: "other"}
    return {r.user_id: short[r.combined] for r in recs}


# ---------------------------------------------------------------- stages

def stage_ingest(ctx: Context) -> None:
    store = ingest_tweets(ctx.need_path("tweets"), ctx.cfg.ingest.schema or None)
    if len(store) == 0:
        raise DataError("no parseable tweets in the input file")
    d = ctx.dir()
    store.write_jsonl(d / "tweets.jsonl", ctx.provenance())
    ctx.write_json(d / "summary.json", {"tweets": len(store), "users": len(store.users()),
                                        "skipped": store.skipped, "duplicates": store.duplicates})
    logger.info("ingested %d tweets from %d users", len(store), len(store.users()))


def stage_stance(ctx: Context) -> None:
    store = _load_store(ctx)
    lexicon = HashtagLexicon.read_csv(ctx.need_path("lexicon"))
    pol = ctx.cfg.path("politicians")
    registry = PoliticianRegistry.read_csv(pol) if pol is not None else PoliticianRegistry()
    dp = ctx.cfg.path("descriptions")
    descriptions = read_descriptions_csv(dp) if dp is not None else None
    records = label_users(store, lexicon, registry, descriptions, config=ctx.cfg.stance)
    dist = stance_distribution(records)
    d = ctx.dir()
    write_stance_csv(d / "users.csv", records, ctx.provenance())
    counts = {c.value: sum(1 for r in records if r.combined is c) for c in CATEGORIES}
    _write_csv(d / "distribution.csv", ctx.provenance(), ["category", "users", "percent"],
               [[c.value, counts[c.value], f"{dist[c.value]:.4f}"] for c in CATEGORIES])
    labels = {r.user_id: r.combined.value for r in records}
    net = build_response_network(store, labels, consistent_only=True)
    export_graph(net, d / "responses.csv", "csv", header=ctx.provenance())
    same, base = net.homophily()
    ctx.write_json(d / "summary.json", {
        "users": len(records), "distribution": dist, "counts": counts,
        "response_edges": sum(net.edges.values()),
        "homophily": None if np.isnan(same) else same, "homophily_baseline": None if np.isnan(base) else base,
    })
    logger.info("stance distribution: %s", {k: round(v, 2) for k, v in dist.items()})


def stage_embed(ctx: Context) -> None:
    store = _load_store(ctx)
    labels = {u: s for u, s in _stance_map(ctx).items() if s in ("pro", "anti")}
    if not labels:
        raise DataError("no consistently labeled users; nothing to embed")
    d = ctx.dir()
    info = {}
    for k, stance in enumerate(("pro", "anti")):
        corpus = build_stance_corpus(store, labels, stance)
        if corpus.token_count == 0:
            raise DataError(f"the {stance} corpus is empty")
        corpus.write(d / f"corpus_{stance}.txt", ctx.provenance())
        model = train_embeddings(corpus, replace(ctx.cfg.embed, seed=ctx.seed + k))
        model.save(d / f"model_{stance}.bin", ctx.provenance())
        info[stance] = {"sequences": len(corpus), "tokens": corpus.token_count, "users": corpus.source_user_count,
                        "vocab": len(model), "loss_history": model.loss_history}
    ctx.write_json(d / "summary.json", {"corpora": info, "embed": asdict(ctx.cfg.embed)})


def stage_align(ctx: Context) -> None:
    ctx.require("embed")
    a = StanceCorpus.read(ctx.require("embed", "corpus_pro.txt"), "pro")
    b = StanceCorpus.read(ctx.require("embed", "corpus_anti.txt"), "anti")
    ac = ctx.cfg.align
    exp = ExperimentConfig(replace(ctx.cfg.embed, seed=ctx.seed), ac.eval_k, ac.n_runs, ctx.seed, ac.csls_k,
                           ac.disagreed_k)
    sw = ctx.cfg.path("stopwords")
    anchors = load_stopwords(sw)
    rep = run_polarization_experiment(a, b, exp, anchors)
    if not (0.0 <= rep.mean <= 1.0 and rep.std >= 0.0):
        raise InvariantError(f"similarity report out of range: mean={rep.mean} std={rep.std}")
    d = ctx.dir()
    _write_csv(d / "disagreed.csv", ctx.provenance(), ["rank", "source_word", "translation", "cosine"],
               [[r, s, t, f"{c:.6f}"] for r, s, t, c in rep.disagreed[0]])
    doc = rep.to_dict()
    doc["direction"] = {"forward": "pro->anti", "backward": "anti->pro"}
    ctx.write_json(d / "summary.json", doc)
    logger.info("similarity %.4f (std %.4f) over %d runs", rep.mean, rep.std, rep.n_runs)


_RT_PREFIX = re.compile(r"^RT @\w+:\s*")


def _content(store: TweetStore, t) -> tuple[str, str]:
    """(content key, text) so that a retweet and its original share one unit."""
    if t.retweeted_tweet_id is not None:
        orig = store.get(t.retweeted_tweet_id)
        if orig is not None:
            return orig.id, orig.text
        return t.retweeted_tweet_id, _RT_PREFIX.sub("", t.text)
    return t.id, t.text


def _url_decision(urls, rules: UrlLabelRule) -> str:
    labs = {url_label(u, rules) for u in urls}
    if RELEVANT in labs:
        return RELEVANT
    if IRRELEVANT in labs:
        return IRRELEVANT
    return UNKNOWN


def stage_classify(ctx: Context) -> None:
    store = _load_store(ctx)
    cc = ctx.cfg.classify
    up = ctx.cfg.path("url_labels")
    rules = UrlLabelRule.read_csv(up, cc.irrelevant_sections) if up else UrlLabelRule({}, cc.irrelevant_sections)

    units: dict[str, dict] = {}  # content key -> text, url decision, member tweet ids
    for t in store:
        if not t.urls:
            continue
        key, text = _content(store, t)
        u = units.setdefault(key, {"text": text, "decision": UNKNOWN, "tweets": []})
        dec = _url_decision(t.urls, rules)
        if dec == RELEVANT or (dec == IRRELEVANT and u["decision"] == UNKNOWN):
            u["decision"] = dec
        u["tweets"].append(t.id)
    keys = sorted(units)
    weak = [(1 if units[k]["decision"] == RELEVANT else 0, units[k]["text"]) for k in keys
            if units[k]["decision"] != UNKNOWN]
    extra = ctx.cfg.path("labeled_examples")
    if extra is not None:
        weak += read_labeled_tsv(extra)
    ded = dedupe_texts(weak)
    examples = ded.examples
    if len({y for y, _ in examples}) < 2:
        raise DataError("classify needs labeled examples of both classes (URL labels or labeled_examples)")

    rng = np.random.default_rng(ctx.seed)
    order = rng.permutation(len(examples))
    n_test = int(round(cc.test_fraction * len(examples)))
    test = [examples[i] for i in order[:n_test]]
    train = [examples[i] for i in order[n_test:]]

    seen, seqs = set(), []
    for t in store:
        key, text = _content(store, t)
        if key not in seen:
            seen.add(key)
            toks = tokenize(text)
            if toks:
                seqs.append(toks)
    emb = train_embeddings(StanceCorpus("all", seqs), replace(cc.embedding, seed=ctx.seed))
    cnn_cfg = CnnConfig(cc.embed_dim, cc.filters_per_width, tuple(cc.filter_widths), cc.dropout, cc.max_sequence,
                        cc.learning_rate, cc.epochs, cc.batch_size, ctx.seed, cc.optimizer)
    try:
        model = train_cnn(train, emb, cnn_cfg)
    except ValueError as exc:
        raise DataError(f"cannot train the relevance classifier: {exc}") from exc
    metrics = None
    if len({y for y, _ in test}) == 2:
        m = evaluate(model, test, emb)
        metrics = {**asdict(m), "confusion": m.confusion.tolist()}
    else:
        logger.warning("held-out set lacks a class; metrics not computed")

    unknown = [k for k in keys if units[k]["decision"] == UNKNOWN]
    probs = dict(zip(unknown, predict_many(model, [units[k]["text"] for k in unknown], emb)))
    rows, n_rel = [], 0
    for k in keys:
        u = units[k]
        if u["decision"] != UNKNOWN:
            src, rel, p = "url", int(u["decision"] == RELEVANT), ""
        elif np.isnan(probs[k]):
            src, rel, p = "none", 0, ""
        else:
            src, rel, p = "model", int(probs[k] >= 0.5), f"{probs[k]:.6f}"
        for tid in u["tweets"]:
            rows.append([tid, k, src, rel, p])
            n_rel += rel
    rows.sort()
    d = ctx.dir()
    _write_csv(d / "relevance.csv", ctx.provenance(), ["tweet_id", "content_id", "source", "relevant", "p_relevant"],
               rows)
    model.save(d / "model.bin", ctx.provenance())
    ctx.write_json(d / "summary.json", {
        "units": len(keys), "url_labeled": len(keys) - len(unknown), "model_labeled": len(unknown),
        "examples": len(examples), "duplicates": ded.duplicates, "conflicts": ded.conflicts,
        "train": len(train), "test": len(test), "metrics": metrics, "tweets_relevant": n_rel,
        "tweets_scored": len(rows), "loss_history": model.history,
    })


def _relevant_ids(ctx: Context) -> set[str]:
    return {r["tweet_id"] for r in _read_csv(ctx.require("classify", "relevance.csv")) if r["relevant"] == "1"}


def _media(ctx: Context) -> dict:
    media = read_media_registry(ctx.need_path("media"))
    if ctx.country:
        media = {k: m for k, m in media.items() if m.country.lower() == ctx.country.lower()}
    if not media:
        raise DataError(f"no media outlets{' for country ' + ctx.country if ctx.country else ''}")
    return media


def stage_cluster(ctx: Context) -> None:
    store = _load_store(ctx)
    relevant = _relevant_ids(ctx)
    media = _media(ctx)
    g = build_bipartite(store, media, relevance=lambda t: t.id in relevant)
    if g.n_edges == 0:
        raise DataError("no relevant retweets of registered media")
    cc = ctx.cfg.cluster
    p = project_media(g, cc.min_shared)
    if p.W.sum() == 0:
        raise DataError("media projection has no edges; lower cluster.min_shared")
    assign = louvain(p, cc.resolution, ctx.seed)
    # canonical community ids: order of first appearance over sorted media ids
    remap: dict[int, int] = {}
    for m in p.media:
        remap.setdefault(assign.membership[m], len(remap))
    membership = {m: remap[c] for m, c in assign.membership.items()}
    q = modularity(p.W, [membership[m] for m in p.media], cc.resolution)
    if abs(q - assign.modularity) > 1e-9:
        raise InvariantError(f"modularity mismatch: {q} vs {assign.modularity}")
    d = ctx.dir()
    ext = "csv" if cc.export_format == "csv" else "graphml"
    export_graph(g, d / f"bipartite.{ext}", cc.export_format, header=ctx.provenance())
    export_graph(p, d / f"projection.{ext}", cc.export_format, node_attrs={"community": membership},
                 header=ctx.provenance())
    _write_csv(d / "clusters.csv", ctx.provenance(), ["media_user_id", "community", "name", "bloc", "country"],
               [[m, membership[m], media[m].name, media[m].bloc, media[m].country] for m in p.media])
    groups: dict[int, list[str]] = {}
    for m in p.media:
        groups.setdefault(membership[m], []).append(m)
    ctx.write_json(d / "summary.json", {
        "country": ctx.country, "media": len(p.media), "users": len(g.users), "edges": g.n_edges,
        "communities": [groups[c] for c in sorted(groups)], "modularity": q, "resolution": cc.resolution,
    })
    logger.info("%d communities, Q=%.4f", len(groups), q)


def stage_flow(ctx: Context) -> None:
    summary = _read_json(ctx.require("cluster"))
    if (summary.get("country") or None) != (ctx.country or None):
        raise DataError(f"flow requires cluster output for country {ctx.country!r}; "
                        f"found country {summary.get('country')!r}")
    store = _load_store(ctx)
    stances = _stance_map(ctx)
    relevant = _relevant_ids(ctx)
    clusters = _read_csv(ctx.require("cluster", "clusters.csv"))
    excluded = {int(c) for c in ctx.cfg.flow.exclude_communities}
    kept = sorted({int(r["community"]) for r in clusters} - excluded)
    state_of = {c: i for i, c in enumerate(kept)}
    cluster_of = {r["media_user_id"]: state_of[int(r["community"])] for r in clusters
                  if int(r["community"]) in state_of}
    all_media = {r["media_user_id"] for r in clusters}
    events = [RetweetEvent(t.user_id, t.retweeted_user_id, t.timestamp, t.id, stances.get(t.user_id))
              for t in store if t.retweeted_user_id in all_media and t.id in relevant]
    if not events:
        raise DataError("no relevant retweets of clustered media")
    profiles, n_excluded = consumption_profiles(events)
    if ctx.cfg.flow.baseline == "analyzed":
        g_pro = country_baseline(stances, {e.user_id for e in events})
    else:
        g_pro = country_baseline(stances)
    if not 0.0 < g_pro < 1.0:
        raise DataError(f"country baseline g_pro={g_pro} is degenerate")
    rep = entropy_report(profiles, g_pro)
    if any(h > 0 for h in rep.entropy.values()):
        raise InvariantError("positive relative entropy")
    counts, edges = ratio_histogram(profiles, ctx.cfg.flow.bins)
    tm = build_transitions([e for e in events if e.media_id in cluster_of], cluster_of, len(kept),
                           [f"community_{c}" for c in kept])
    d = ctx.dir()
    write_entropy_csv(d / "entropy.csv", rep, ctx.provenance())
    write_histogram_csv(d / "histogram.csv", counts, edges, ctx.provenance())
    write_transition_csv(d / "transitions.csv", tm, ctx.provenance())
    mob = None
    if not tm.undefined_rows:
        mi = mobility_indices(tm)
        if abs(mi.IR + mi.ML + mi.MR - 1.0) > 1e-9:
            raise InvariantError(f"mobility indices do not sum to 1: {mi}")
        mob = asdict(mi)
    else:
        logger.warning("transition rows %s have no observations; mobility indices undefined", tm.undefined_rows)
    P = tm.P
    ctx.write_json(d / "summary.json", {
        "country": ctx.country, "g_pro": g_pro, "media_profiles": len(profiles), "media_excluded": n_excluded,
        "events": len(events), "states": tm.states, "counts": tm.counts.tolist(),
        "P": [[None if np.isnan(x) else float(x) for x in row] for row in P],
        "undefined_rows": tm.undefined_rows, "mobility": mob,
        "entropy": {m: rep.entropy[m] for m in sorted(rep.entropy)},
    })


def stage_synth(ctx: Context) -> None:
    d = ctx.dir()
    world = gen_world(ctx.cfg.synth, ctx.seed)
    paths = write_world(world, d, ctx.provenance())
    cfg = {
        "schema_version": 1,
        "seed": ctx.seed,
        "paths": {k: Path(v).name for k, v in paths.items() if k != "truth"},
        "embed": {"dim": 50, "epochs": 5, "min_count": 5, "bucket_count": 2 ** 16, "sample": 1e-3},
        "align": {"eval_k": 5000, "n_runs": 3, "disagreed_k": 100},
        "classify": {"embed_dim": 50, "filters_per_width": 20, "epochs": 30, "dropout": 0.5,
                     "optimizer": "adam", "learning_rate": 0.003,
                     "embedding": {"dim": 50, "epochs": 3, "bucket_count": 2 ** 16, "sample": 1e-3}},
        "cluster": {"min_shared": 1},
        "flow": {"bins": 10},
    }
    (d / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    ctx.write_json(d / "summary.json", {"tweets": len(world.tweets), "files": sorted(Path(p).name
                                                                                      for p in paths.values())})
    logger.info("wrote synthetic world (%d tweets) to %s", len(world.tweets), d)


def stage_report(ctx: Context) -> None:
    stance = _read_json(ctx.require("stance"))
    align = _read_json(ctx.require("align"))
    cluster = _read_json(ctx.require("cluster"))
    flow = _read_json(ctx.require("flow"))
    classify = _read_json(ctx.require("classify"))
    dis = _read_csv(ctx.require("align", "disagreed.csv"))
    doc = {
        "stance_distribution": stance["distribution"],
        "stance_counts": stance["counts"],
        "similarity": {k: align[k] for k in ("mean", "std", "values", "forward", "backward", "n_runs",
                                             "eval_size", "missing_in_target")},
        "disagreed_pairs": [[int(r["rank"]), r["source_word"], r["translation"]] for r in dis[:25]],
        "relevance_classifier": classify.get("metrics"),
        "clusters": {"communities": cluster["communities"], "modularity": cluster["modularity"]},
        "entropy": {"g_pro": flow["g_pro"], "H": flow["entropy"]},
        "transitions": {"states": flow["states"], "P": flow["P"], "counts": flow["counts"]},
        "mobility": flow["mobility"],
        "country": ctx.country,
    }
    ctx.write_json(ctx.out / "report.json", doc)


STAGE_FUNCS = {
    "ingest": stage_ingest, "stance": stage_stance, "embed": stage_embed, "align": stage_align,
    "classify": stage_classify, "cluster": stage_cluster, "flow": stage_flow, "synth": stage_synth,
    "report": stage_report,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polarscope", description="Polarization analysis pipeline over tweet collections.")
    p.add_argument("--version", action="version", version=f"polarscope {__version__}")
    sub = p.add_subparsers(dest="stage", metavar="STAGE", parser_class=_Parser)
    for s in STAGES:
        sp = sub.add_parser(s, help=f"run the {s} stage")
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
        sp.add_argument("--country", help="restrict media to one country")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> tuple[RunConfig, Path]:
    if args.config:
        cfg = load_config(args.config, check_paths=args.stage != "synth")
    elif args.stage == "synth":
        cfg = parse_config({}, ".", check_paths=False)
    else:
        raise UsageError(f"{args.stage} needs --config")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.country:
        cfg.country = args.country
    out = Path(args.out) if args.out else cfg.out_dir()
    if out is None:
        raise UsageError("an output directory is required (--out or the config's out key)")
    return cfg, out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.stage:
            raise UsageError("a stage is required: " + " | ".join(STAGES))
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg, out = _resolve(args)
        STAGE_FUNCS[args.stage](Context(cfg, out, args.stage))
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        print(f"polarscope: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"polarscope: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DataError, ValueError, OSError, KeyError, ExperimentRunError, np.linalg.LinAlgError) as exc:
        print(f"polarscope: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
