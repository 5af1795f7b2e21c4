"""Pipeline stages behind the CLI subcommands.

Directory layout under an output root::

    suite/        suite.json, datasets/*.frldat, checkpoints/ (online agents)
    runs/<dataset>/<label>/seed<k>/
                  config.ini, metrics.csv, *_manifest.json, *.frlnet, eval.csv
    report/       summary.csv, summary.txt, reports.csv
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from factored_rl import data as data_mod
from factored_rl.agents import Agent, train_offline, train_online
from factored_rl.bias_sim import NoiseSimConfig, simulate_decqn, simulate_dqn, write_curves_csv
from factored_rl.cli.config import RunConfig
from factored_rl.decomp import ActionSpec
from factored_rl.env_maze import PRESETS, MazeConfig, MazeEnv, random_policy_return
from factored_rl.errors import ConfigError, FactoredRLError
from factored_rl.evaluation import (
    EvalReport,
    evaluate,
    mc_q_error,
    read_reports_csv,
    rollout_return,
    summarize,
    write_reports_csv,
)

log = logging.getLogger(__name__)

BASE_SOURCES = ("expert", "medium", "random")


class StageError(FactoredRLError):
    """A pipeline stage failed; the message names the stage."""


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def env_config(cfg: RunConfig) -> MazeConfig:
    preset = cfg["run"]["preset"]
    if preset not in PRESETS:
        raise ConfigError(f"unknown env preset {preset!r}; expected one of {sorted(PRESETS)}")
    return PRESETS[preset].with_(actuators=cfg["run"]["actuators"])


# ------------------------------------------------------------------ collect
def _online_agents(cfg: RunConfig, env_cfg: MazeConfig, ckpt: Path, no_train: bool, random_anchor: float):
    """Expert and medium agents: loaded from ``ckpt`` or trained online."""
    col = cfg["collect"]
    expert_m, medium_m = ckpt / "expert_manifest.json", ckpt / "medium_manifest.json"
    if expert_m.exists() and medium_m.exists():
        return Agent.load(expert_m), Agent.load(medium_m)
    if no_train:
        raise FileNotFoundError(f"expert/medium checkpoints not found in {ckpt} and training is disabled")
    suite_seed = col["suite_seed"]
    online_cfg = cfg.agent(algorithm="online-decqn", hidden_width=col["online_hidden_width"])
    cand_dir = ckpt / "candidates"
    candidates: list[str] = []

    def keep_snapshot(agent: Agent, step: int, ret: float) -> None:
        if random_anchor < ret < col["expert_stop_return"]:
            tag = f"s{step:07d}"
            agent.save(cand_dir, tag=tag)
            candidates.append(tag)

    env = MazeEnv(env_cfg, seed=_seed(suite_seed, 10))
    expert, olog = train_online(
        env, online_cfg, suite_seed, stop_return=col["expert_stop_return"],
        max_env_steps=col["online_max_steps"], eval_interval=col["online_eval_interval"],
        on_eval=keep_snapshot,
    )
    if not olog.stopped_early:
        raise StageError(
            f"collect/online: greedy return {olog.final_return:.1f} never reached "
            f"expert_stop_return={col['expert_stop_return']} within {col['online_max_steps']} steps"
        )
    expert.save(ckpt, tag="expert")
    expert_return = _anchor_return(cfg, env_cfg, expert)
    if not candidates:
        raise StageError("collect/online: no evaluation fell between random and expert level")
    target = col["medium_fraction"] * expert_return
    scored = [
        (abs(_anchor_return(cfg, env_cfg, Agent.load(cand_dir / f"{t}_manifest.json")) - target), t)
        for t in candidates
    ]
    best = min(scored)[1]
    medium = Agent.load(cand_dir / f"{best}_manifest.json")
    medium.save(ckpt, tag="medium")
    log.info("medium snapshot %s chosen for target return %.2f", best, target)
    return expert, medium


def _anchor_return(cfg: RunConfig, env_cfg: MazeConfig, agent) -> float:
    env = MazeEnv(env_cfg)
    mean, _ = rollout_return(env, agent, cfg["collect"]["expert_anchor_episodes"], cfg["eval"]["seed"])
    return mean


class _AllZero:
    def __init__(self, n: int):
        self.n = n

    def __call__(self, obs):
        return np.zeros(self.n, dtype=np.int64)


def build_suite(cfg: RunConfig, out: Path, no_train: bool = False) -> dict:
    """Train (or load) online agents, collect the base datasets, mix tiers, write suite.json."""
    col = cfg["collect"]
    suite_seed = col["suite_seed"]
    env_cfg = env_config(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoints"
    ds_dir = out / "datasets"
    ds_dir.mkdir(exist_ok=True)
    cfg.write_resolved(out / "config.ini")

    random_anchor = random_policy_return(env_cfg, col["random_anchor_episodes"], _seed(suite_seed, 20))
    expert, medium = _online_agents(cfg, env_cfg, ckpt, no_train, random_anchor)
    expert_return = _anchor_return(cfg, env_cfg, expert)
    medium_return = _anchor_return(cfg, env_cfg, medium)

    T = col["transitions"]
    policies = {
        "expert": (expert, col["collect_epsilon"]),
        "medium": (medium, col["collect_epsilon"]),
        "random": (_AllZero(env_cfg.actuators), 1.0),
    }
    datasets: dict[str, data_mod.Dataset] = {}
    for k, (name, (policy, eps)) in enumerate(policies.items()):
        env = MazeEnv(env_cfg)
        datasets[name] = data_mod.collect(env, policy, T, eps, seed=_seed(suite_seed, 30, k), source=name)
    for k, (tier, recipe) in enumerate(cfg["mix"].items()):
        missing = [s for s, _ in recipe if s not in datasets]
        if missing:
            raise ConfigError(f"mix tier {tier!r} refers to unknown datasets {missing}")
        parts = [(datasets[s], f) for s, f in recipe]
        datasets[tier] = data_mod.mix(parts, T, seed=_seed(suite_seed, 40, k))

    entries = {}
    for name, ds in datasets.items():
        path = ds_dir / f"{name}.frldat"
        data_mod.save(ds, path)
        entries[name] = {
            "file": str(path.relative_to(out)),
            "sha256": sha256_file(path),
            "transitions": len(ds),
            "source_counts": ds.source_counts(),
        }
    manifest = {
        "env": asdict(env_cfg),
        "anchors": {"random": random_anchor, "expert": expert_return},
        "medium_return": medium_return,
        "suite_seed": suite_seed,
        "eval_seed": cfg["eval"]["seed"],
        "datasets": entries,
        "checkpoints": {"expert": "checkpoints/expert_manifest.json", "medium": "checkpoints/medium_manifest.json"},
    }
    (out / "suite.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_suite(suite_dir: Path) -> dict:
    path = suite_dir / "suite.json"
    if not path.exists():
        raise FileNotFoundError(f"no suite manifest at {path}; run 'collect' first")
    return json.loads(path.read_text())


def load_dataset(suite_dir: Path, suite: dict, name: str) -> data_mod.Dataset:
    if name not in suite["datasets"]:
        raise ConfigError(f"dataset {name!r} is not in the suite (have {sorted(suite['datasets'])})")
    entry = suite["datasets"][name]
    path = suite_dir / entry["file"]
    if sha256_file(path) != entry["sha256"]:
        raise data_mod.InvalidDataset(f"{path} does not match the hash recorded in suite.json")
    return data_mod.load(path)


def suite_env_config(suite: dict) -> MazeConfig:
    return MazeConfig(**suite["env"])


# ------------------------------------------------------------------ train / eval
def grid_cells(cfg: RunConfig) -> list[tuple[str, str, int, dict]]:
    """``(dataset, label, seed, agent overrides)`` in config declaration order."""
    tr = cfg["train"]
    knob_map = {"bcq": ("bcq_tau",), "cql": ("cql_alpha",), "iql": ("iql_tau", "iql_lambda"),
                "onestep": ("onestep_lambda",)}
    cells = []
    for dataset in tr["datasets"]:
        for algo in tr["algorithms"]:
            variants: list[dict] = [{}]
            if tr["sweep"] and algo in knob_map:
                knobs = knob_map[algo]
                variants = [dict(zip(knobs, vals)) for vals in itertools.product(*(cfg["sweep"][k] for k in knobs))]
            for overrides in variants:
                label = algo + "".join(f"[{k}={v:g}]" for k, v in overrides.items())
                for seed in cfg["run"]["seeds"]:
                    cells.append((dataset, label, seed, {"algorithm": algo, **overrides}))
    return cells


def cell_dir(runs: Path, dataset: str, label: str, seed: int) -> Path:
    return runs / dataset / label / f"seed{seed}"


def evaluate_agent(cfg: RunConfig, suite: dict, agent) -> tuple[EvalReport, float | None]:
    env_cfg = suite_env_config(suite)
    anchors = (suite["anchors"]["random"], suite["anchors"]["expert"])
    if anchors[0] == anchors[1]:
        raise StageError(f"eval: random and expert anchors are both {anchors[0]}; normalized scores are undefined")
    ev = cfg["eval"]
    report = evaluate(MazeEnv(env_cfg), agent, ev["episodes"], ev["seed"], anchors)
    q_err = None
    if ev["q_error"] and getattr(agent, "critics", None):
        q_err = mc_q_error(
            MazeEnv(env_cfg), agent, agent.config.gamma, ev["q_error_rollouts"], ev["q_error_horizon"], ev["seed"]
        )
    return report, q_err


def run_cell(cfg: RunConfig, suite_dir: Path, runs: Path, cell) -> tuple[str, str, EvalReport]:
    dataset_name, label, seed, overrides = cell
    suite = load_suite(suite_dir)
    out = cell_dir(runs, dataset_name, label, seed)
    out.mkdir(parents=True, exist_ok=True)
    agent_cfg = cfg.agent(**overrides)
    resolved = RunConfig({s: dict(v) for s, v in cfg.items()})
    resolved["agent"].update(overrides)
    resolved["run"]["seeds"] = [seed]
    resolved["train"]["datasets"] = [dataset_name]
    resolved["train"]["algorithms"] = [overrides["algorithm"]]
    resolved["train"]["sweep"] = False
    resolved.write_resolved(out / "config.ini")
    ds = load_dataset(suite_dir, suite, dataset_name)
    agent, _ = train_offline(ds, agent_cfg, seed, out_dir=out, resume=cfg["train"]["resume"])
    report, q_err = evaluate_agent(cfg, suite, agent)
    # per-cell reports carry the training seed; the evaluation seed is fixed in the config
    report = replace(report, seed=seed)
    write_reports_csv(out / "eval.csv", [(label, dataset_name, report)])
    if q_err is not None:
        (out / "q_error.json").write_text(json.dumps({"mc_q_error": q_err}))
    log.info("%s/%s/seed%d: return %.2f score %.1f", dataset_name, label, seed, report.mean_return,
             report.normalized_score)
    return label, dataset_name, report


def _run_cell_star(args):
    return run_cell(*args)


def train_grid(cfg: RunConfig, suite_dir: Path, runs: Path) -> list[tuple[str, str, EvalReport]]:
    cells = grid_cells(cfg)
    runs.mkdir(parents=True, exist_ok=True)
    workers = cfg["run"]["workers"]
    jobs = [(cfg, suite_dir, runs, c) for c in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell_star, jobs))
    return [run_cell(*j) for j in jobs]


# ------------------------------------------------------------------ report
def collect_reports(runs: Path) -> list[tuple[str, str, EvalReport]]:
    rows = []
    for path in sorted(runs.glob("*/*/seed*/eval.csv")):
        rows.extend(read_reports_csv(path))
    return rows


def build_report(cfg: RunConfig, runs: Path, out: Path):
    """Aggregate per-cell reports in config order; returns (table, missing seed cells)."""
    reports = collect_reports(runs)
    labels = list(dict.fromkeys(label for _, label, _, _ in grid_cells(cfg)))
    extra = [a for a, _, _ in reports if a not in labels]
    labels += list(dict.fromkeys(extra))
    datasets = list(cfg["train"]["datasets"])
    datasets += [d for d in dict.fromkeys(d for _, d, _ in reports) if d not in datasets]
    table = summarize(reports, labels, datasets)
    have = {(d, a, r.seed) for a, d, r in reports}
    missing = [(d, a, s) for d, a, s, _ in grid_cells(cfg) if (d, a, s) not in have]
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "summary.csv")
    text = table.to_text()
    if missing:
        text += "\n\nmissing runs:\n" + "\n".join(f"  {d} / {a} / seed {s}" for d, a, s in missing)
    (out / "summary.txt").write_text(text + "\n")
    write_reports_csv(out / "reports.csv", reports)
    return table, missing


# ------------------------------------------------------------------ simulate
def run_simulation(cfg: RunConfig, out: Path) -> list[Path]:
    sim = cfg["simulate"]
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for dims in sim["specs"]:
        nc = NoiseSimConfig(
            ActionSpec(dims), b=sim["b"], k=sim["k"], gamma=sim["gamma"],
            inner_reps=sim["inner_reps"], outer_reps=sim["outer_reps"], seed=sim["seed"],
        )
        path = out / f"bias_{'x'.join(str(d) for d in dims)}.csv"
        write_curves_csv(path, simulate_dqn(nc), simulate_decqn(nc))
        paths.append(path)
    return paths

