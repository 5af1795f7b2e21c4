"""``factored-rl`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 file or I/O error, 1 for any other pipeline failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from factored_rl import data as data_mod
from factored_rl.agents import Agent
from factored_rl.cli import pipeline
from factored_rl.cli.config import load_config
from factored_rl.errors import ConfigError, FactoredRLError, FileFormatError, TrainingDivergence
from factored_rl.evaluation import write_reports_csv

OUTPUT_ROOT_ENV = "FRL_OUTPUT_ROOT"
EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("factored_rl")


def output_root(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "frl_output"))


def cmd_collect(args) -> int:
    cfg = load_config(args.config)
    root = output_root(args.out)
    manifest = pipeline.build_suite(cfg, root / "suite", no_train=args.no_train)
    for name, entry in manifest["datasets"].items():
        print(f"{name:22s} {entry['transitions']:6d} transitions  sha256 {entry['sha256'][:16]}")
    a = manifest["anchors"]
    print(f"anchors: random {a['random']:.2f}  expert {a['expert']:.2f}  (medium {manifest['medium_return']:.2f})")
    return EXIT_OK


def _parse_part(text: str) -> tuple[Path, float]:
    path, sep, frac = text.rpartition(":")
    if not sep:
        raise ConfigError(f"--part expects PATH:FRACTION, got {text!r}")
    try:
        return Path(path), float(frac)
    except ValueError:
        raise ConfigError(f"bad fraction in --part {text!r}") from None


def cmd_mix(args) -> int:
    parts = [(data_mod.load(p), f) for p, f in map(_parse_part, args.part)]
    ds = data_mod.mix(parts, args.total, args.seed)
    data_mod.save(ds, args.output)
    if args.csv:
        data_mod.export_csv(ds, args.csv)
    counts = ", ".join(f"{k}={v}" for k, v in ds.source_counts().items() if v)
    print(f"wrote {len(ds)} transitions to {args.output} ({counts})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    root = output_root(args.out)
    reports = pipeline.train_grid(cfg, root / "suite", root / "runs")
    for label, dataset, rep in reports:
        print(f"{dataset:22s} {label:16s} seed {rep.seed}: score {rep.normalized_score:7.1f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    root = output_root(args.out)
    suite = pipeline.load_suite(root / "suite")
    agent = Agent.load(args.checkpoint)
    if args.episodes is not None:
        cfg["eval"]["episodes"] = args.episodes
    if args.q_error:
        cfg["eval"]["q_error"] = True
    report, q_err = pipeline.evaluate_agent(cfg, suite, agent)
    print(
        f"episodes {report.episodes}  return {report.mean_return:.2f} ± {report.std_error:.2f}  "
        f"normalized {report.normalized_score:.1f}"
    )
    if q_err is not None:
        print(f"mc_q_error {q_err:.4f}")
    if args.csv:
        write_reports_csv(args.csv, [(agent.config.algorithm, args.dataset or "", report)])
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.output) if args.output else output_root(args.out) / "simulate"
    for path in pipeline.run_simulation(cfg, out):
        print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    root = output_root(args.out)
    runs = Path(args.results) if args.results else root / "runs"
    table, missing = pipeline.build_report(cfg, runs, root / "report")
    print(table.to_text())
    if missing:
        print(f"\n{len(missing)} run(s) missing:")
        for d, a, s in missing:
            print(f"  {d} / {a} / seed {s}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="factored-rl", description="Offline RL in factorised action spaces")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI config file (defaults apply when omitted)")
        sp.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./frl_output)")

    sp = sub.add_parser("collect", help="train online agents, collect and mix the dataset suite")
    common(sp)
    sp.add_argument("--no-train", action="store_true", help="require existing expert/medium checkpoints")
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("mix", help="mix existing dataset files")
    sp.add_argument("--part", action="append", required=True, metavar="PATH:FRACTION")
    sp.add_argument("--total", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)
    sp.add_argument("--csv", help="also export the mixed dataset as CSV")
    sp.set_defaults(func=cmd_mix)

    sp = sub.add_parser("train", help="train offline agents over the configured grid")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a saved agent against the suite anchors")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="agent manifest (*_manifest.json)")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--q-error", action="store_true")
    sp.add_argument("--dataset", help="dataset label for the CSV row")
    sp.add_argument("--csv", help="write the report as CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("simulate", help="overestimation-bias simulation curves")
    common(sp)
    sp.add_argument("--output", help="directory for the CSV files")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="aggregate evaluation results into summary tables")
    common(sp)
    sp.add_argument("--results", help="runs directory (default <out>/runs)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FactoredRLError as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
