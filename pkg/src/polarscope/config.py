"""Run configuration: one JSON document, validated in full before any stage runs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .embed import EmbedConfig
from .stance import StanceConfig
from .synth import SwapSpec, WorldSpec

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """All validation problems of a config, reported together."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class PathsConfig:
    tweets: Optional[str] = None
    lexicon: Optional[str] = None
    politicians: Optional[str] = None
    descriptions: Optional[str] = None
    media: Optional[str] = None
    stopwords: Optional[str] = None
    url_labels: Optional[str] = None
    labeled_examples: Optional[str] = None


@dataclass
class IngestConfig:
    schema: dict = field(default_factory=dict)


@dataclass
class AlignConfig:
    eval_k: int = 5000
    n_runs: int = 6
    csls_k: int = 0
    disagreed_k: int = 100


@dataclass
class ClassifyConfig:
    embed_dim: int = 300
    filters_per_width: int = 100
    filter_widths: tuple = (3, 4, 5)
    dropout: float = 0.5
    max_sequence: int = 64
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    optimizer: str = "sgd"
    test_fraction: float = 0.2
    irrelevant_sections: tuple = ("deportes", "sports", "cultura", "culture", "tecnologia", "technology")
    embedding: EmbedConfig = field(default_factory=lambda: EmbedConfig(dim=300))


@dataclass
class ClusterConfig:
    min_shared: int = 1
    resolution: float = 1.0
    export_format: str = "csv"


@dataclass
class FlowConfig:
    bins: int = 10
    baseline: str = "analyzed"
    exclude_communities: list = field(default_factory=list)


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    country: Optional[str] = None
    out: Optional[str] = None
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    stance: StanceConfig = field(default_factory=StanceConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    synth: WorldSpec = field(default_factory=WorldSpec)
    base_dir: str = "."

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def fingerprint_dict(self) -> dict:
        # the output location does not change results
        d = self.to_dict()
        d.pop("out")
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.fingerprint_dict(), sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def out_dir(self) -> Optional[Path]:
        if self.out is None:
            return None
        p = Path(self.out)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def path(self, name: str) -> Optional[Path]:
        p = getattr(self.paths, name)
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p


# seeds come from the top level only
_NO_SEED = {EmbedConfig, WorldSpec, SwapSpec}


def _coerce(value: Any, tp, where: str, problems: list[str]):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(tp), typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where, problems)
    if tp is bool:
        if isinstance(value, bool):
            return value
    elif tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif tp is str:
        if isinstance(value, str):
            return value
    elif tp is tuple or origin is tuple:
        if isinstance(value, list):
            return tuple(value)
    elif tp is list or origin is list:
        if isinstance(value, list):
            return list(value)
    elif tp is dict or origin is dict:
        if isinstance(value, dict):
            return dict(value)
    else:
        return value
    problems.append(f"{where}: expected {getattr(tp, '__name__', tp)}, got {type(value).__name__} {value!r}")
    return None


def _build(cls, data, where: str, problems: list[str]):
    if not isinstance(data, dict):
        problems.append(f"{where or 'config'}: expected an object, got {type(data).__name__}")
        return cls()
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    if cls is RunConfig:
        names.discard("base_dir")
    if cls in _NO_SEED:
        names.discard("seed")
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if key not in names:
            problems.append(f"{path}: unknown key")
            continue
        v = _coerce(value, hints[key], path, problems)
        if v is not None or value is None:
            kwargs[key] = v
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        problems.append(f"{where or 'config'}: {exc}")
        return cls()
    return obj


def _check(problems: list[str], where: str, fn) -> None:
    try:
        fn()
    except ValueError as exc:
        problems.append(f"{where}: {exc}")


def parse_config(data: dict, base_dir=".", check_paths: bool = True) -> RunConfig:
    problems: list[str] = []
    cfg = _build(RunConfig, data, "", problems)
    cfg.base_dir = str(base_dir)
    if cfg.schema_version != SCHEMA_VERSION:
        problems.append(f"schema_version: unsupported version {cfg.schema_version} (expected {SCHEMA_VERSION})")
    _check(problems, "embed", cfg.embed.validate)
    _check(problems, "classify.embedding", cfg.classify.embedding.validate)
    _check(problems, "synth", cfg.synth.validate)
    if cfg.classify.embedding.dim != cfg.classify.embed_dim:
        problems.append("classify.embedding.dim must equal classify.embed_dim")
    if not 0.0 < cfg.classify.test_fraction < 1.0:
        problems.append("classify.test_fraction must lie in (0, 1)")
    if cfg.align.n_runs < 1 or cfg.align.eval_k < 1:
        problems.append("align.n_runs and align.eval_k must be >= 1")
    if cfg.cluster.export_format not in ("csv", "graphml"):
        problems.append("cluster.export_format must be 'csv' or 'graphml'")
    if cfg.flow.baseline not in ("analyzed", "global"):
        problems.append("flow.baseline must be 'analyzed' or 'global'")
    if cfg.flow.bins < 1:
        problems.append("flow.bins must be >= 1")
    if cfg.stance.denominator not in ("stance", "all"):
        problems.append("stance.denominator must be 'stance' or 'all'")
    for name in ("hashtag_threshold", "retweet_threshold"):
        v = getattr(cfg.stance, name)
        if not 0.5 < v <= 1.0:
            problems.append(f"stance.{name} must lie in (0.5, 1]")
    if check_paths:
        for f in dataclasses.fields(PathsConfig):
            p = cfg.path(f.name)
            if p is not None and not p.exists():
                problems.append(f"paths.{f.name}: {p} does not exist")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    return parse_config(data, path.parent, check_paths)
