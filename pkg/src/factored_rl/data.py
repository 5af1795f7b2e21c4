"""Offline datasets: collection, tier mixing, uniform sampling and the FRLDAT1 format.

FRLDAT1 layout (little-endian)::

    magic       8 bytes  b"FRLDAT1\\0"
    version     u32      currently 1
    env_id      u16 length + UTF-8 bytes
    N           u32      action dimensions, followed by N x u32 sub-action counts
    obs_dim     u32
    count       u64      number of transitions
    source      u8       0 expert, 1 medium, 2 random, 3 mixed
    seed        i64      generation seed (-1 if unknown)
    recipe      u32 part count, then per part: u8 source, f64 fraction, u64 count
    body        f64[count*obs_dim] states, u16[count*N] actions, f64[count] rewards,
                f64[count*obs_dim] next states, u8[count] terminal flags,
                u8[count] per-transition source tags
"""

from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from factored_rl.decomp import ActionSpec
from factored_rl.errors import (
    InsufficientSource,
    InvalidDataset,
    MagicMismatch,
    TruncatedFile,
    VersionMismatch,
)

MAGIC = b"FRLDAT1\0"
FORMAT_VERSION = 1
SOURCES = ("expert", "medium", "random", "mixed")

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RecipePart:
    source: str
    fraction: float
    count: int


@dataclass(frozen=True)
class DatasetHeader:
    env_id: str
    action_spec: ActionSpec
    obs_dim: int
    count: int
    source: str
    seed: int = -1
    recipe: tuple[RecipePart, ...] = ()
    version: int = FORMAT_VERSION


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool
    source: str = "expert"


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass(eq=False)
class Dataset:
    """Immutable columnar store of transitions plus a self-describing header."""

    header: DatasetHeader
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    sources: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.rewards)
        if self.sources is None:
            self.sources = np.full(n, SOURCES.index(self.header.source), dtype=np.uint8)
        self.states = np.ascontiguousarray(self.states, dtype=np.float64)
        self.next_states = np.ascontiguousarray(self.next_states, dtype=np.float64)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.int64)
        self.rewards = np.ascontiguousarray(self.rewards, dtype=np.float64)
        self.terminals = np.ascontiguousarray(self.terminals, dtype=np.float64)
        self.sources = np.ascontiguousarray(self.sources, dtype=np.uint8)
        for arr in (self.states, self.actions, self.rewards, self.next_states, self.terminals, self.sources):
            arr.flags.writeable = False
        validate(self)

    def __len__(self) -> int:
        return len(self.rewards)

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            self.states[i], self.actions[i], float(self.rewards[i]), self.next_states[i],
            bool(self.terminals[i]), SOURCES[self.sources[i]],
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, Dataset) and to_bytes(self) == to_bytes(other)

    @property
    def action_spec(self) -> ActionSpec:
        return self.header.action_spec

    def source_counts(self) -> dict[str, int]:
        counts = np.bincount(self.sources, minlength=len(SOURCES))
        return {name: int(c) for name, c in zip(SOURCES, counts) if c}

    def subset(self, idx: np.ndarray) -> "Dataset":
        header = replace(self.header, count=len(idx), recipe=())
        return Dataset(
            header, self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.terminals[idx], self.sources[idx],
        )


def validate(ds: Dataset) -> None:
    h = ds.header
    n = len(ds.rewards)
    spec = h.action_spec
    if h.count != n:
        raise InvalidDataset(f"header count {h.count} != {n} transitions")
    if h.source not in SOURCES:
        raise InvalidDataset(f"unknown source tag {h.source!r}")
    if ds.states.shape != (n, h.obs_dim) or ds.next_states.shape != (n, h.obs_dim):
        raise InvalidDataset("state arrays do not match obs_dim")
    if ds.actions.shape != (n, spec.N):
        raise InvalidDataset("action array does not match the action spec")
    if n and ((ds.actions < 0).any() or (ds.actions >= np.asarray(spec.n)).any()):
        raise InvalidDataset("sub-action index out of range")
    if not (np.isfinite(ds.states).all() and np.isfinite(ds.next_states).all() and np.isfinite(ds.rewards).all()):
        raise InvalidDataset("non-finite values in dataset")
    if not np.isin(ds.terminals, (0.0, 1.0)).all():
        raise InvalidDataset("terminal flags must be 0 or 1")
    if n and ds.sources.max() >= len(SOURCES):
        raise InvalidDataset("unknown per-transition source tag")
    if h.recipe and sum(p.count for p in h.recipe) != n:
        raise InvalidDataset("mix recipe counts do not add up to the transition count")


def collect(
    env,
    policy: Policy,
    num_transitions: int,
    epsilon: float,
    seed: int,
    source: str = "expert",
    env_id: str = "maze",
) -> Dataset:
    """Roll out ``policy`` with per-dimension epsilon randomisation.

    Episodes run back to back until exactly ``num_transitions`` are recorded.
    ``terminal`` is set only when the goal is reached, never on truncation.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if num_transitions < 1:
        raise ValueError("num_transitions must be >= 1")
    spec: ActionSpec = env.action_spec
    n_arr = np.asarray(spec.n)
    rng = np.random.default_rng([seed, 0])
    obs_dim = env.observation_dim
    states = np.empty((num_transitions, obs_dim))
    next_states = np.empty((num_transitions, obs_dim))
    actions = np.empty((num_transitions, spec.N), dtype=np.int64)
    rewards = np.empty(num_transitions)
    terminals = np.zeros(num_transitions)
    obs = env.reset(seed=int(np.random.SeedSequence([seed, 1]).generate_state(1)[0]))
    for t in range(num_transitions):
        a = np.array(policy(obs), dtype=np.int64)
        if epsilon > 0.0:
            explore = rng.random(spec.N) < epsilon
            a = np.where(explore, rng.integers(0, n_arr), a)
        nxt, r, done, info = env.step(a)
        states[t], actions[t], rewards[t], next_states[t] = obs, a, r, nxt
        terminals[t] = float(info.goal_reached)
        obs = env.reset() if done else nxt
    header = DatasetHeader(env_id, spec, obs_dim, num_transitions, source, seed)
    return Dataset(header, states, actions, rewards, next_states, terminals)


def mix(parts: Sequence[tuple[Dataset, float]], total: int, seed: int) -> Dataset:
    """Draw ``floor(fraction * total)`` transitions from each part without replacement.

    Any rounding remainder goes to the first part; the result is shuffled.
    """
    if not parts:
        raise ValueError("mix needs at least one part")
    fractions = [f for _, f in parts]
    if abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {math.fsum(fractions)}, not 1")
    first = parts[0][0].header
    for ds, _ in parts:
        if ds.header.action_spec != first.action_spec or ds.header.obs_dim != first.obs_dim:
            raise InvalidDataset("cannot mix datasets with different specs")
    # tiny slack so e.g. 0.45 * 10000 is not floored to 4499 by representation error
    counts = [math.floor(f * total + 1e-9) for f in fractions]
    counts[0] += total - sum(counts)
    rng = np.random.default_rng([seed, 2])
    chunks = []
    recipe = []
    for k, ((ds, frac), count) in enumerate(zip(parts, counts)):
        if count > len(ds):
            raise InsufficientSource(
                f"part {k} ({ds.header.source}) has {len(ds)} transitions, {count} requested"
            )
        chunks.append(ds.subset(np.sort(rng.choice(len(ds), size=count, replace=False))))
        recipe.append(RecipePart(ds.header.source, float(frac), count))
    order = rng.permutation(total)
    cat = lambda name: np.concatenate([getattr(c, name) for c in chunks])[order]  # noqa: E731
    header = DatasetHeader(
        first.env_id, first.action_spec, first.obs_dim, total, "mixed", seed, tuple(recipe)
    )
    return Dataset(
        header, cat("states"), cat("actions"), cat("rewards"), cat("next_states"),
        cat("terminals"), cat("sources"),
    )


def sample_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """I.i.d. uniform sample with replacement."""
    if len(dataset) == 0:
        raise InvalidDataset("cannot sample from an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = rng.integers(0, len(dataset), size=batch_size)
    return Batch(
        dataset.states[idx], dataset.actions[idx], dataset.rewards[idx],
        dataset.next_states[idx], dataset.terminals[idx],
    )


def to_bytes(ds: Dataset) -> bytes:
    h = ds.header
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", h.version))
    env = h.env_id.encode("utf-8")
    buf.write(struct.pack("<H", len(env)) + env)
    buf.write(struct.pack(f"<I{h.action_spec.N}I", h.action_spec.N, *h.action_spec.n))
    buf.write(struct.pack("<IQBq", h.obs_dim, h.count, SOURCES.index(h.source), h.seed))
    buf.write(struct.pack("<I", len(h.recipe)))
    for part in h.recipe:
        buf.write(struct.pack("<BdQ", SOURCES.index(part.source), part.fraction, part.count))
    buf.write(ds.states.astype("<f8").tobytes())
    buf.write(ds.actions.astype("<u2").tobytes())
    buf.write(ds.rewards.astype("<f8").tobytes())
    buf.write(ds.next_states.astype("<f8").tobytes())
    buf.write(ds.terminals.astype("<u1").tobytes())
    buf.write(ds.sources.astype("<u1").tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> Dataset:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFile(f"dataset file ends at byte {len(data)}, needed {pos + n}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    def unpack(fmt: str):
        return struct.unpack(fmt, take(struct.calcsize(fmt)))

    if take(8) != MAGIC:
        raise MagicMismatch("not an FRLDAT1 dataset")
    (version,) = unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"dataset format version {version}, expected {FORMAT_VERSION}")
    (env_len,) = unpack("<H")
    env_id = take(env_len).decode("utf-8")
    (n_dims,) = unpack("<I")
    n = unpack(f"<{n_dims}I")
    obs_dim, count, source, seed = unpack("<IQBq")
    if source >= len(SOURCES):
        raise InvalidDataset(f"unknown source code {source}")
    (n_parts,) = unpack("<I")
    recipe = []
    for _ in range(n_parts):
        src, frac, cnt = unpack("<BdQ")
        if src >= len(SOURCES):
            raise InvalidDataset(f"unknown source code {src} in recipe")
        recipe.append(RecipePart(SOURCES[src], frac, cnt))

    def arr(dtype: str, size: int) -> np.ndarray:
        return np.frombuffer(take(np.dtype(dtype).itemsize * size), dtype=dtype)

    states = arr("<f8", count * obs_dim).reshape(count, obs_dim)
    actions = arr("<u2", count * n_dims).reshape(count, n_dims)
    rewards = arr("<f8", count)
    next_states = arr("<f8", count * obs_dim).reshape(count, obs_dim)
    terminals = arr("<u1", count)
    sources = arr("<u1", count)
    if pos != len(data):
        raise InvalidDataset(f"{len(data) - pos} trailing bytes after dataset body")
    header = DatasetHeader(
        env_id, ActionSpec(n), obs_dim, count, SOURCES[source], seed, tuple(recipe), version
    )
    return Dataset(header, states, actions, rewards, next_states, terminals, sources)


def save(dataset: Dataset, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(dataset))


def load(path: str | os.PathLike) -> Dataset:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def export_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    """Lossless CSV (floats written with ``repr``) for inspection."""
    d = dataset.header.obs_dim
    N = dataset.action_spec.N
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [f"s{i}" for i in range(d)] + [f"a{i}" for i in range(N)] + ["reward"]
            + [f"next_s{i}" for i in range(d)] + ["terminal", "source"]
        )
        for i in range(len(dataset)):
            w.writerow(
                [repr(float(v)) for v in dataset.states[i]]
                + [int(v) for v in dataset.actions[i]]
                + [repr(float(dataset.rewards[i]))]
                + [repr(float(v)) for v in dataset.next_states[i]]
                + [int(dataset.terminals[i]), SOURCES[dataset.sources[i]]]
            )


def with_header(dataset: Dataset, **changes) -> Dataset:
    return Dataset(
        replace(dataset.header, **changes), dataset.states, dataset.actions, dataset.rewards,
        dataset.next_states, dataset.terminals, dataset.sources,
    )
