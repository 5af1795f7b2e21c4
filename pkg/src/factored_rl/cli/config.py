"""Typed INI configuration with a fixed schema.

Every key has a type and a default, so an empty file is a complete
configuration.  Unknown sections or keys are rejected.  ``resolved_text``
renders a config with all defaults filled in, which is written next to every
run's outputs.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable

from factored_rl.agents.agent import AgentConfig
from factored_rl.errors import ConfigError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none") else float(s)


def _str_list(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


def _int_list(s: str) -> list[int]:
    return [int(p) for p in _str_list(s)]


def _float_list(s: str) -> list[float]:
    return [float(p) for p in _str_list(s)]


def _recipe(s: str) -> list[tuple[str, float]]:
    """``random:0.45, medium:0.45, expert:0.1``"""
    out = []
    for part in _str_list(s):
        name, _, frac = part.partition(":")
        out.append((name.strip(), float(frac)))
    return out


def _dims_list(s: str) -> list[list[int]]:
    """Semicolon-separated action specs: ``2,2,2; 2,2,2,2; 3,3,3``."""
    return [_int_list(p) for p in s.split(";") if p.strip()]


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{n}:{f!r}" for n, f in value)
        if value and isinstance(value[0], list):
            return "; ".join(",".join(str(x) for x in v) for v in value)
        return ", ".join(str(v) for v in value)
    return str(value)


Parser = Callable[[str], Any]


def _agent_schema() -> dict[str, tuple[Parser, Any]]:
    out: dict[str, tuple[Parser, Any]] = {}
    for f in fields(AgentConfig):
        default = f.default
        if isinstance(default, bool):
            parse: Parser = _bool
        elif f.name in ("grad_clip", "bcq_tau", "cql_alpha", "iql_tau", "iql_lambda", "onestep_lambda"):
            parse = _opt_float
        elif isinstance(default, int):
            parse = int
        elif isinstance(default, float):
            parse = float
        else:
            parse = str
        out[f.name] = (parse, default)
    return out


SCHEMA: dict[str, dict[str, tuple[Parser, Any]]] = {
    "run": {
        "seeds": (_int_list, [0, 1, 2, 3, 4]),
        "preset": (str, "benchmark"),
        "actuators": (int, 3),
        "workers": (int, 1),
    },
    "agent": _agent_schema(),
    "collect": {
        "transitions": (int, 10_000),
        "suite_seed": (int, 0),
        "expert_stop_return": (float, 95.0),
        "medium_fraction": (float, 1.0 / 3.0),
        "online_max_steps": (int, 100_000),
        "online_eval_interval": (int, 2000),
        "online_hidden_width": (int, 512),
        "collect_epsilon": (float, 0.0),
        "random_anchor_episodes": (int, 1000),
        "expert_anchor_episodes": (int, 100),
    },
    "mix": {
        "medium-expert": (_recipe, [("medium", 0.5), ("expert", 0.5)]),
        "random-medium-expert": (_recipe, [("random", 0.45), ("medium", 0.45), ("expert", 0.1)]),
    },
    "train": {
        "algorithms": (_str_list, ["bc", "decqn", "bcq", "cql", "iql", "onestep"]),
        "datasets": (_str_list, ["expert", "medium-expert", "medium", "random-medium-expert"]),
        "sweep": (_bool, False),
        "resume": (_bool, True),
    },
    "sweep": {
        "bcq_tau": (_float_list, [0.025, 0.05, 0.1, 0.25, 0.5, 0.75]),
        "cql_alpha": (_float_list, [0.25, 0.5, 1.0, 2.0]),
        "iql_tau": (_float_list, [0.5, 0.6, 0.7, 0.8]),
        "iql_lambda": (_float_list, [1.0, 2.0, 5.0, 10.0, 20.0, 50.0]),
        "onestep_lambda": (_float_list, [1.0, 2.0, 5.0, 10.0, 20.0, 50.0]),
    },
    "eval": {
        "episodes": (int, 100),
        "seed": (int, 12345),
        "q_error": (_bool, False),
        "q_error_rollouts": (int, 10),
        "q_error_horizon": (int, 500),
    },
    "simulate": {
        "specs": (_dims_list, [[2, 2, 2], [2, 2, 2, 2], [3, 3, 3]]),
        "b": (float, 1.0),
        "k": (float, 2.0),
        "gamma": (float, 1.0),
        "inner_reps": (int, 10_000),
        "outer_reps": (int, 100),
        "seed": (int, 0),
    },
}


class RunConfig(dict):
    """``section -> key -> typed value`` with every default materialised."""

    def agent(self, **overrides) -> AgentConfig:
        return AgentConfig(**{**self["agent"], **overrides})

    def resolved_text(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_fmt(self[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def write_resolved(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.resolved_text())


def parse_config(text: str = "", source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = RunConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            parse, _ = SCHEMA[section][key]
            try:
                cfg[section][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from None
    # validate the agent section eagerly so errors surface before any work
    cfg.agent()
    for name, recipe in cfg["mix"].items():
        if abs(sum(f for _, f in recipe) - 1.0) > 1e-9:
            raise ConfigError(f"{source}: mix recipe {name!r} fractions do not sum to 1")
    if not cfg["run"]["seeds"]:
        raise ConfigError(f"{source}: [run] seeds is empty")
    return cfg


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return parse_config("")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text(), source=str(p))
