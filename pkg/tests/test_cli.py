import json
from pathlib import Path

import pytest

from polarscope.cli import STAGES, main
from polarscope.config import ConfigError, load_config, parse_config

SMALL_SYNTH = {
    "swap": {"vocab_size": 300, "n_swaps": 5, "tokens_per_community": 20000, "n_templates": 200,
             "n_stopwords": 120, "swap_rank_range": [120, 170]},
    "users_per_stance": 30, "mixed_users": 5, "quiet_users": 5, "media_per_bloc": 4, "posts_per_media": 20,
}
PIPELINE = ["ingest", "stance", "embed", "align", "classify", "cluster", "flow", "report"]


def run(*argv):
    return main([str(a) for a in argv])


def make_world(tmp: Path, seed=7) -> Path:
    cfg = tmp / "synth_cfg.json"
    cfg.write_text(json.dumps({"synth": SMALL_SYNTH}))
    world = tmp / "world"
    assert run("synth", "--config", cfg, "--out", world, "--seed", seed) == 0
    run_cfg = world / "synth" / "config.json"
    data = json.loads(run_cfg.read_text())
    # shrink training for test speed
    data["embed"].update({"dim": 12, "epochs": 2, "bucket_count": 4096, "min_count": 2})
    data["align"].update({"n_runs": 2, "eval_k": 200})
    data["classify"].update({"embed_dim": 12, "filters_per_width": 6, "epochs": 5})
    data["classify"]["embedding"].update({"dim": 12, "epochs": 1, "bucket_count": 4096, "min_count": 2})
    run_cfg.write_text(json.dumps(data))
    return run_cfg


def run_pipeline(cfg: Path, out: Path):
    for stage in PIPELINE:
        assert run(stage, "--config", cfg, "--out", out) == 0, stage


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = make_world(tmp)
    run_pipeline(cfg, tmp / "out1")
    return tmp, cfg


def _files(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestPipeline:
    def test_outputs_present(self, pipeline):
        tmp, _ = pipeline
        out = tmp / "out1"
        for stage in PIPELINE[:-1]:
            assert (out / stage / "summary.json").exists(), stage
        for rel in ["stance/users.csv", "align/disagreed.csv", "classify/relevance.csv", "cluster/clusters.csv",
                    "flow/transitions.csv", "flow/entropy.csv", "embed/model_pro.bin", "report.json"]:
            assert (out / rel).exists(), rel

    def test_report_sections(self, pipeline):
        tmp, _ = pipeline
        rep = json.loads((tmp / "out1" / "report.json").read_text())
        for key in ("stance_distribution", "similarity", "clusters", "entropy", "transitions", "mobility"):
            assert key in rep
        assert sum(rep["stance_distribution"].values()) == pytest.approx(100.0)
        assert 0.0 <= rep["similarity"]["mean"] <= 1.0

    def test_provenance_everywhere(self, pipeline):
        tmp, _ = pipeline
        for name, data in _files(tmp / "out1").items():
            if name.endswith(".bin"):
                assert b'"provenance": "polarscope' in data[:4096], name
            elif name.endswith(".json"):
                assert json.loads(data)["_provenance"].startswith("polarscope 0.1.0 stage="), name
            else:
                first = data.decode("utf-8").splitlines()[0]
                assert first.startswith("# polarscope 0.1.0 stage=") and "seed=7" in first, name

    def test_byte_identical_rerun(self, pipeline):
        tmp, cfg = pipeline
        run_pipeline(cfg, tmp / "out2")
        a, b = _files(tmp / "out1"), _files(tmp / "out2")
        assert a.keys() == b.keys()
        assert [k for k in a if a[k] != b[k]] == []

    def test_align_rerun_same_dir(self, pipeline):
        tmp, cfg = pipeline
        before = (tmp / "out1" / "align" / "summary.json").read_bytes()
        assert run("align", "--config", cfg, "--out", tmp / "out1") == 0
        assert (tmp / "out1" / "align" / "summary.json").read_bytes() == before

    def test_clusters_match_planted_blocs(self, pipeline):
        tmp, _ = pipeline
        truth = json.loads((tmp / "world" / "synth" / "truth.json").read_text())["media_bloc"]
        summary = json.loads((tmp / "out1" / "cluster" / "summary.json").read_text())
        groups = [sorted(c) for c in summary["communities"]]
        blocs = {}
        for m, b in truth.items():
            blocs.setdefault(b, []).append(m)
        assert sorted(groups) == sorted(sorted(v) for v in blocs.values())

    def test_mobility_sums_to_one(self, pipeline):
        tmp, _ = pipeline
        mob = json.loads((tmp / "out1" / "flow" / "summary.json").read_text())["mobility"]
        assert mob["IR"] + mob["ML"] + mob["MR"] == pytest.approx(1.0, abs=1e-9)


class TestErrors:
    def test_flow_before_cluster(self, tmp_path, capsys):
        cfg = make_world(tmp_path)
        out = tmp_path / "o"
        for stage in ("ingest", "stance"):
            assert run(stage, "--config", cfg, "--out", out) == 0
        assert run("flow", "--config", cfg, "--out", out) == 2
        assert "requires cluster output" in capsys.readouterr().err

    def test_unknown_keys_aggregated(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"embed": {"dimm": 3}, "colour": 1, "flow": {"bins": "x"}}))
        assert run("ingest", "--config", p, "--out", tmp_path) == 1
        err = capsys.readouterr().err
        assert "embed.dimm: unknown key" in err and "colour: unknown key" in err and "flow.bins" in err

    def test_missing_path(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"paths": {"tweets": "nope.jsonl"}}))
        assert run("ingest", "--config", p, "--out", tmp_path) == 1
        assert "paths.tweets" in capsys.readouterr().err

    def test_no_stage(self, capsys):
        assert run() == 1

    def test_bad_flag(self):
        assert run("ingest", "--frobnicate") == 1

    def test_stage_without_config(self, tmp_path):
        assert run("stance", "--out", tmp_path) == 1

    def test_no_tweets(self, tmp_path):
        (tmp_path / "t.jsonl").write_text("garbage\n")
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"paths": {"tweets": "t.jsonl"}, "out": "o"}))
        assert run("ingest", "--config", p) == 2

    def test_every_stage_registered(self):
        assert set(STAGES) == set(PIPELINE) | {"synth"}


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({}, check_paths=False)
        assert cfg.embed.dim == 100 and cfg.align.n_runs == 6 and cfg.classify.embed_dim == 300

    def test_nested_override(self):
        cfg = parse_config({"embed": {"dim": 30}, "classify": {"filter_widths": [2, 3]}}, check_paths=False)
        assert cfg.embed.dim == 30 and cfg.classify.filter_widths == (2, 3)

    def test_seed_only_top_level(self):
        with pytest.raises(ConfigError, match="embed.seed: unknown key"):
            parse_config({"embed": {"seed": 3}}, check_paths=False)

    def test_cross_field(self):
        with pytest.raises(ConfigError) as exc:
            parse_config({"classify": {"embed_dim": 20}, "flow": {"baseline": "x"},
                          "stance": {"hashtag_threshold": 0.4}}, check_paths=False)
        assert len(exc.value.problems) == 3

    def test_type_errors(self):
        with pytest.raises(ConfigError) as exc:
            parse_config({"seed": "1", "embed": {"dim": 2.5}}, check_paths=False)
        assert len(exc.value.problems) == 2

    def test_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config({"schema_version": 9}, check_paths=False)

    def test_fingerprint_ignores_out(self):
        a = parse_config({"out": "a"}, check_paths=False)
        b = parse_config({"out": "b"}, check_paths=False)
        c = parse_config({"seed": 1}, check_paths=False)
        assert a.fingerprint() == b.fingerprint() != c.fingerprint()

    def test_paths_relative_to_config(self, tmp_path):
        (tmp_path / "t.jsonl").write_text("")
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"paths": {"tweets": "t.jsonl"}, "out": "res"}))
        cfg = load_config(p)
        assert cfg.path("tweets") == tmp_path / "t.jsonl" and cfg.out_dir() == tmp_path / "res"

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{")
        with pytest.raises(ConfigError):
            load_config(p)


def test_descriptions_count_as_observation(tmp_path):
    tweets = [{"id": str(i), "user_id": "u", "timestamp": i, "text": "x", "hashtags": ["si"]} for i in range(18)]
    tweets.append({"id": "99", "user_id": "u", "timestamp": 99, "text": "x", "hashtags": ["no"]})
    (tmp_path / "t.jsonl").write_text("\n".join(json.dumps(t) for t in tweets) + "\n")
    (tmp_path / "lex.csv").write_text("dimension,hashtag,stance\ngovernment,si,pro\ngovernment,no,anti\n")
    (tmp_path / "desc.csv").write_text("user_id,description\nu,orgulloso #si\n")
    base = {"paths": {"tweets": "t.jsonl", "lexicon": "lex.csv"}, "out": "o"}

    def label(cfg):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg))
        assert run("ingest", "--config", p) == 0 and run("stance", "--config", p) == 0
        return json.loads((tmp_path / "o" / "stance" / "summary.json").read_text())["counts"]

    assert label(base)["other"] == 1
    with_desc = {**base, "paths": {**base["paths"], "descriptions": "desc.csv"}}
    assert label(with_desc)["consistent_pro_government"] == 1
