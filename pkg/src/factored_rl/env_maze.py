"""Continuous 2-D maze driven by N binary actuators.

Actuator ``i`` pushes the agent ``step_size`` in direction ``2*pi*i/N``; the
displacement of one step is the vector sum over active actuators (plus optional
Gaussian noise).  A move that would leave the unit square or touch a wall is
cancelled as a whole.  Reaching the goal disc pays +100 and ends the episode;
every other step costs 0.1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from factored_rl import kernels
from factored_rl.decomp import ActionSpec
from factored_rl.errors import ConfigError, DimensionError

GOAL_REWARD = 100.0
STEP_REWARD = -0.1

Point = tuple[float, float]
Segment = tuple[float, float, float, float]


@dataclass(frozen=True)
class MazeConfig:
    actuators: int = 3
    step_size: float = 0.05
    max_steps: int = 150
    goal_center: Point = (0.9, 0.9)
    goal_radius: float = 0.05
    start: Point = (0.1, 0.1)
    walls: tuple[Segment, ...] = ((0.0, 0.5, 0.7, 0.5),)
    motion_noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "goal_center", tuple(float(v) for v in self.goal_center))
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "walls", tuple(tuple(float(v) for v in w) for w in self.walls))
        self.validate()

    def validate(self) -> None:
        if self.actuators < 1:
            raise ConfigError("maze needs at least one actuator")
        if self.step_size <= 0 or self.max_steps < 1:
            raise ConfigError("step_size must be positive and max_steps >= 1")
        if self.goal_radius <= 0:
            raise ConfigError("goal_radius must be positive")
        if self.motion_noise_std < 0:
            raise ConfigError("motion_noise_std must be non-negative")
        for w in self.walls:
            if len(w) != 4:
                raise ConfigError(f"wall {w} is not a segment (x1, y1, x2, y2)")
        for name, p in (("start", self.start), ("goal_center", self.goal_center)):
            if len(p) != 2 or not all(0.0 <= v <= 1.0 for v in p):
                raise ConfigError(f"{name} {p} is outside the unit square")
            for w in self.walls:
                if kernels.segments_intersect(p[0], p[1], p[0], p[1], *w):
                    raise ConfigError(f"{name} {p} lies on wall {w}")

    @property
    def action_spec(self) -> ActionSpec:
        return ActionSpec.uniform(self.actuators, 2)

    def with_(self, **changes) -> "MazeConfig":
        return replace(self, **changes)


PRESETS: dict[str, MazeConfig] = {
    "default": MazeConfig(),
    # stochastic variant used for the offline benchmark suite
    "benchmark": MazeConfig(motion_noise_std=0.01),
}


def actuator_directions(n: int) -> np.ndarray:
    """Unit vectors at angles 2*pi*i/n; antipodal pairs are exact negatives."""
    half = (n + 1) // 2 if n % 2 else n // 2
    dirs = np.empty((n, 2))
    for i in range(n):
        if n % 2 == 0 and i >= half:
            dirs[i] = -dirs[i - half]
        else:
            theta = 2.0 * math.pi * i / n
            dirs[i] = (math.cos(theta), math.sin(theta))
    dirs[np.abs(dirs) < 1e-12] = 0.0
    return dirs


@dataclass
class MazeState:
    position: np.ndarray
    steps_elapsed: int = 0

    def copy(self) -> "MazeState":
        return MazeState(self.position.copy(), self.steps_elapsed)


@dataclass
class StepInfo:
    goal_reached: bool
    truncated: bool
    blocked: bool


@dataclass
class MazeEnv:
    """Stateful maze with its own RNG stream.

    ``reset`` returns the observation (the position); ``step`` returns
    ``(observation, reward, done, info)``.
    """

    config: MazeConfig = field(default_factory=MazeConfig)
    seed: int | None = None
    record: bool = False

    def __post_init__(self):
        self._dirs = actuator_directions(self.config.actuators) * self.config.step_size
        self._walls = np.asarray(self.config.walls, dtype=np.float64).reshape(-1, 4)
        self._goal = np.asarray(self.config.goal_center)
        self.rng = np.random.default_rng(self.seed)
        self.state = MazeState(np.asarray(self.config.start, dtype=np.float64).copy())
        self.trajectory: list[tuple] = []

    @property
    def action_spec(self) -> ActionSpec:
        return self.config.action_spec

    @property
    def observation_dim(self) -> int:
        return 2

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = MazeState(np.asarray(self.config.start, dtype=np.float64).copy())
        self.trajectory = []
        return self.state.position.copy()

    def displacement(self, action: Sequence[int]) -> np.ndarray:
        a = np.asarray(action)
        n = self.config.actuators
        if a.shape != (n,):
            raise DimensionError(f"action has shape {a.shape}, expected ({n},)")
        dx = dy = 0.0
        for i in range(n):
            bit = a[i]
            if bit == 1:
                dx += self._dirs[i, 0]
                dy += self._dirs[i, 1]
            elif bit != 0:
                raise DimensionError(f"actuator {i} must be 0 or 1, got {bit}")
        return np.array([dx, dy])

    def step(self, action: Sequence[int]):
        cfg = self.config
        d = self.displacement(action)
        if cfg.motion_noise_std > 0:
            d = d + self.rng.normal(0.0, cfg.motion_noise_std, size=2)
        x, y = self.state.position
        nx, ny, blocked = kernels.maze_move(float(x), float(y), float(d[0]), float(d[1]), self._walls)
        self.state.position = np.array([nx, ny])
        self.state.steps_elapsed += 1
        goal = math.hypot(nx - self._goal[0], ny - self._goal[1]) <= cfg.goal_radius
        reward = GOAL_REWARD if goal else STEP_REWARD
        truncated = not goal and self.state.steps_elapsed >= cfg.max_steps
        if self.record:
            self.trajectory.append(
                (self.state.steps_elapsed, nx, ny, tuple(int(b) for b in action), reward)
            )
        return self.state.position.copy(), reward, goal or truncated, StepInfo(goal, truncated, blocked)


def random_policy_return(config: MazeConfig, episodes: int, seed: int) -> float:
    """Mean undiscounted return of uniformly random factored actions."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = MazeEnv(config, seed=seed)
    rng = np.random.default_rng([seed, 1])
    returns = []
    for _ in range(episodes):
        env.reset()
        done = False
        rewards = []
        while not done:
            _, r, done, _ = env.step(rng.integers(0, 2, size=config.actuators))
            rewards.append(r)
        returns.append(math.fsum(rewards))
    return math.fsum(returns) / episodes


def write_trajectory_csv(path, trajectory: list[tuple], actuators: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "x", "y"] + [f"a{i}" for i in range(actuators)] + ["reward"])
        for step, x, y, bits, reward in trajectory:
            w.writerow([step, repr(x), repr(y), *bits, repr(reward)])
