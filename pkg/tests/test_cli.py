import csv
import json

import numpy as np
import pytest

from factored_rl import data
from factored_rl.agents import Agent, AgentConfig
from factored_rl.cli import main
from factored_rl.cli.config import SCHEMA, load_config, parse_config
from factored_rl.cli.pipeline import grid_cells
from factored_rl.decomp import ActionSpec
from factored_rl.errors import ConfigError

SMALL_CONFIG = """
[run]
seeds = 0, 1
preset = default

[agent]
hidden_width = 8
batch_size = 16
updates = 6
log_interval = 3
checkpoint_interval = 3

[collect]
transitions = 400
random_anchor_episodes = 5
expert_anchor_episodes = 2

[train]
algorithms = decqn, bc
datasets = expert, random-medium-expert

[eval]
episodes = 2

[simulate]
specs = 2, 2
inner_reps = 50
outer_reps = 3
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("FRL_OUTPUT_ROOT", str(tmp_path / "out"))
    (tmp_path / "run.ini").write_text(SMALL_CONFIG)
    return tmp_path


def seed_checkpoints(root):
    ckpt = root / "out" / "suite" / "checkpoints"
    cfg = AgentConfig(algorithm="online-decqn", hidden_width=8)
    Agent(cfg, ActionSpec.uniform(3, 2), 2, seed=1).save(ckpt, "expert")
    Agent(cfg, ActionSpec.uniform(3, 2), 2, seed=2).save(ckpt, "medium")


def collected(root, capsys=None):
    seed_checkpoints(root)
    assert main(["collect", "--config", str(root / "run.ini"), "--no-train"]) == 0
    suite_path = root / "out" / "suite" / "suite.json"
    suite = json.loads(suite_path.read_text())
    # random-init agents score like the random policy; give the suite a usable expert anchor
    suite["anchors"]["expert"] = 85.0
    suite_path.write_text(json.dumps(suite))
    return suite


class TestConfig:
    def test_zero_config_defaults(self):
        cfg = parse_config("")
        assert cfg["collect"]["transitions"] == 10_000
        assert cfg["eval"]["episodes"] == 100
        assert cfg["agent"]["hidden_width"] == 512
        assert cfg["sweep"]["cql_alpha"] == [0.25, 0.5, 1.0, 2.0]

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learnig_rate"):
            parse_config("[agent]\nlearnig_rate = 0.1\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            parse_config("[optimizer]\nlr = 1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config("[agent]\ngamma = 2\n")
        with pytest.raises(ConfigError):
            parse_config("[agent]\nbatch_size = many\n")

    def test_recipe_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            parse_config("[mix]\nmedium-expert = medium:0.5, expert:0.4\n")

    def test_resolved_round_trip(self):
        cfg = parse_config(SMALL_CONFIG)
        again = parse_config(cfg.resolved_text())
        assert again == cfg
        for section, keys in SCHEMA.items():
            for key in keys:
                assert f"{key} = " in cfg.resolved_text()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")


class TestGrid:
    def test_five_cells(self):
        cfg = parse_config("[train]\nalgorithms = cql\ndatasets = expert\n")
        assert len(grid_cells(cfg)) == 5

    def test_sweep_mirrors_search_space(self):
        cfg = parse_config("[train]\nalgorithms = cql\ndatasets = expert\nsweep = true\n[run]\nseeds = 0\n")
        labels = [c[1] for c in grid_cells(cfg)]
        assert labels == ["cql[cql_alpha=0.25]", "cql[cql_alpha=0.5]", "cql[cql_alpha=1]", "cql[cql_alpha=2]"]

    def test_iql_sweep_is_product(self):
        cfg = parse_config("[train]\nalgorithms = iql\ndatasets = expert\nsweep = true\n[run]\nseeds = 0\n")
        assert len(grid_cells(cfg)) == 4 * 6


class TestExitCodes:
    def test_config_error(self, workdir, capsys):
        (workdir / "bad.ini").write_text("[agent]\nnope = 1\n")
        assert main(["simulate", "--config", str(workdir / "bad.ini")]) == 2
        assert "nope" in capsys.readouterr().err

    def test_missing_checkpoint_no_train(self, workdir, capsys):
        assert main(["collect", "--config", str(workdir / "run.ini"), "--no-train"]) == 4
        assert "checkpoints not found" in capsys.readouterr().err

    def test_bad_dataset_file(self, workdir, capsys):
        (workdir / "junk.frldat").write_bytes(b"not a dataset")
        code = main(["mix", "--part", f"{workdir / 'junk.frldat'}:1", "--total", "5", "--output", str(workdir / "o")])
        assert code == 4

    def test_train_without_suite(self, workdir):
        assert main(["train", "--config", str(workdir / "run.ini")]) == 4


class TestPipeline:
    def test_collect_suite(self, workdir):
        suite = collected(workdir)
        names = set(suite["datasets"])
        assert {"expert", "medium", "medium-expert", "random-medium-expert"} <= names
        assert all(e["transitions"] == 400 for e in suite["datasets"].values())
        assert suite["datasets"]["random-medium-expert"]["source_counts"] == {"random": 180, "medium": 180, "expert": 40}
        assert suite["anchors"]["random"] == pytest.approx(-15.0, abs=1e-9)
        assert (workdir / "out" / "suite" / "config.ini").exists()

    def test_collect_rerun_same_hashes(self, workdir):
        first = collected(workdir)
        assert main(["collect", "--config", str(workdir / "run.ini"), "--no-train"]) == 0
        second = json.loads((workdir / "out" / "suite" / "suite.json").read_text())
        assert {k: v["sha256"] for k, v in first["datasets"].items()} == {
            k: v["sha256"] for k, v in second["datasets"].items()
        }

    def test_train_eval_report(self, workdir, capsys):
        collected(workdir)
        assert main(["train", "--config", str(workdir / "run.ini")]) == 0
        runs = workdir / "out" / "runs"
        cell = runs / "expert" / "decqn" / "seed0"
        for name in ("config.ini", "eval.csv", "metrics.csv", "final_manifest.json", "u0000003_manifest.json"):
            assert (cell / name).exists(), name
        # the frozen config is a complete, loadable config for this one cell
        frozen = load_config(cell / "config.ini")
        assert frozen["run"]["seeds"] == [0] and frozen["train"]["algorithms"] == ["decqn"]

        capsys.readouterr()
        assert main(["report", "--config", str(workdir / "run.ini")]) == 0
        text = capsys.readouterr().out
        header = text.splitlines()[0].split()
        assert header == ["dataset", "decqn", "bc"]
        summary = list(csv.DictReader(open(workdir / "out" / "report" / "summary.csv")))
        assert len(summary) == 4 and all(r["seeds"] == "2" for r in summary)

        out_csv = workdir / "e.csv"
        code = main(["eval", "--config", str(workdir / "run.ini"), "--checkpoint", str(cell / "final_manifest.json"),
                     "--q-error", "--csv", str(out_csv), "--dataset", "expert"])
        assert code == 0
        assert "mc_q_error" in capsys.readouterr().out
        assert out_csv.read_text().startswith("algorithm,dataset,seed")

    def test_report_lists_missing(self, workdir, capsys):
        collected(workdir)
        main(["train", "--config", str(workdir / "run.ini")])
        victim = workdir / "out" / "runs" / "expert" / "bc" / "seed1" / "eval.csv"
        victim.unlink()
        capsys.readouterr()
        assert main(["report", "--config", str(workdir / "run.ini")]) == 0
        out = capsys.readouterr().out
        assert "1 run(s) missing" in out and "expert / bc / seed 1" in out

    def test_frozen_config_rerun_bit_identical(self, workdir):
        collected(workdir)
        main(["train", "--config", str(workdir / "run.ini")])
        cell = workdir / "out" / "runs" / "expert" / "decqn" / "seed0"
        before = (cell / "final_critic0.frlnet").read_bytes()
        metrics = (cell / "metrics.csv").read_text()
        for f in cell.glob("*.frlnet"):
            f.unlink()
        for f in cell.glob("*_manifest.json"):
            f.unlink()
        assert main(["train", "--config", str(cell / "config.ini")]) == 0
        assert (cell / "final_critic0.frlnet").read_bytes() == before
        assert (cell / "metrics.csv").read_text() == metrics

    def test_resume_from_checkpoint(self, workdir):
        collected(workdir)
        main(["train", "--config", str(workdir / "run.ini")])
        cell = workdir / "out" / "runs" / "expert" / "decqn" / "seed1"
        final = (cell / "final_critic1.frlnet").read_bytes()
        # pretend the run was interrupted after the update-3 checkpoint
        for f in cell.glob("u0000003_*"):
            (cell / f.name.replace("u0000003", "latest")).write_bytes(f.read_bytes())
        manifest = json.loads((cell / "u0000003_manifest.json").read_text())
        (cell / "latest_manifest.json").write_text(json.dumps(manifest))
        (cell / "final_critic1.frlnet").unlink()
        main(["train", "--config", str(workdir / "run.ini")])
        assert (cell / "final_critic1.frlnet").read_bytes() == final

    def test_mix_command(self, workdir, capsys):
        collected(workdir)
        ds_dir = workdir / "out" / "suite" / "datasets"
        out = workdir / "m.frldat"
        code = main(["mix", "--part", f"{ds_dir / 'random.frldat'}:0.45", "--part", f"{ds_dir / 'medium.frldat'}:0.45",
                     "--part", f"{ds_dir / 'expert.frldat'}:0.1", "--total", "200", "--output", str(out),
                     "--csv", str(workdir / "m.csv")])
        assert code == 0
        ds = data.load(out)
        assert ds.source_counts() == {"random": 90, "medium": 90, "expert": 20}
        assert len((workdir / "m.csv").read_text().splitlines()) == 201

    def test_simulate(self, workdir, capsys):
        assert main(["simulate", "--config", str(workdir / "run.ini"), "--output", str(workdir / "sim")]) == 0
        rows = list(csv.DictReader(open(workdir / "sim" / "bias_2x2.csv")))
        assert [int(r["a_in"]) for r in rows] == [0, 1, 2, 3, 4]
        assert np.isfinite([float(r["var_dec"]) for r in rows]).all()

    def test_eval_equal_anchors_is_stage_error(self, workdir, capsys):
        collected(workdir)
        suite_path = workdir / "out" / "suite" / "suite.json"
        suite = json.loads(suite_path.read_text())
        suite["anchors"]["expert"] = suite["anchors"]["random"]
        suite_path.write_text(json.dumps(suite))
        ckpt = workdir / "out" / "suite" / "checkpoints" / "expert_manifest.json"
        assert main(["eval", "--config", str(workdir / "run.ini"), "--checkpoint", str(ckpt)]) == 1
        assert "anchors" in capsys.readouterr().err
