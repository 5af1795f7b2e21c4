"""Compare the compiled kernels against the numpy fallback.

Run from the repository root after ``pip install -e . --no-build-isolation``::

    python benchmarks/bench_kernels.py            # all kernels
    python benchmarks/bench_kernels.py --repeat 20

Each kernel is timed with ``timeit`` on inputs shaped like the training loop
(batch 256, N=3 dimensions with 2 sub-actions) and the maze step, and the
two backends' outputs are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from factored_rl import kernels
from factored_rl.decomp import ActionSpec
from factored_rl.env_maze import MazeConfig, MazeEnv


def cases(rng):
    spec = ActionSpec.uniform(3, 2)
    wide = ActionSpec.uniform(15, 2)
    values = rng.normal(size=(256, spec.total_utilities))
    wide_values = rng.normal(size=(256, wide.total_utilities))
    mask = rng.random(values.shape) < 0.7
    mask[:, spec.offsets[:-1]] = True
    walls = np.array(MazeConfig().walls)
    uniforms = rng.random((10_000, 27))
    return {
        "segment_max (256x6)": lambda k: k.segment_max(values, spec.offsets),
        "segment_argmax (256x6)": lambda k: k.segment_argmax(values, spec.offsets),
        "segment_logsumexp (256x6)": lambda k: k.segment_logsumexp(values, spec.offsets),
        "segment_logsumexp (256x30)": lambda k: k.segment_logsumexp(wide_values, wide.offsets),
        "masked_segment_max (256x6)": lambda k: k.masked_segment_max(values, mask, spec.offsets),
        "segments_intersect": lambda k: k.segments_intersect(0.3, 0.4, 0.35, 0.55, 0.0, 0.5, 0.7, 0.5),
        "maze_move": lambda k: k.maze_move(0.3, 0.4, 0.05, 0.0, walls),
        "pooled_max (10000x27)": lambda k: k.pooled_max(uniforms, 9, 1.0, 2.0),
    }


def env_steps(n=2000):
    env = MazeEnv()
    env.reset(seed=0)
    acts = np.random.default_rng(0).integers(0, 2, size=(n, 3))
    for a in acts:
        _, _, done, _ = env.step(a)
        if done:
            env.reset()


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=7)
    args = p.parse_args()
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    table = cases(rng)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':30s} " + " ".join(f"{name:>14s}" for name in impls) + "   speedup")
    for label, fn in table.items():
        outs = {name: fn(mod) for name, mod in impls.items()}
        ref = outs["python"]
        for name, out in outs.items():
            np.testing.assert_allclose(np.asarray(out, dtype=float), np.asarray(ref, dtype=float), rtol=1e-15, atol=4e-16)
        best = {}
        for name, mod in impls.items():
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            best[name] = min(timer.repeat(args.repeat, number)) / number
        cells = " ".join(f"{best[n] * 1e6:11.2f} us" for n in impls)
        speed = f"{best['python'] / best['cython']:8.1f}x" if "cython" in best else ""
        print(f"{label:30s} {cells}   {speed}")
    t = min(timeit.repeat(env_steps, number=1, repeat=3))
    print(f"\nmaze env, 2000 steps with the active backend: {t * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
