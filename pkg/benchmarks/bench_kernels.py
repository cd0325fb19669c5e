"""Compare the compiled kernels with the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--seed 0]

Prints best-of-``repeat`` wall time per kernel for each backend and the
speedup.  Inputs are random but seeded, and both backends see the same ones.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from trajmeta import _kernels_py as py

try:
    from trajmeta import _kernels as cy
except ImportError:  # extension not built
    cy = None


def make_inputs(seed: int):
    rng = np.random.default_rng(seed)
    trajs = []
    for _ in range(2000):
        n = int(rng.integers(5, 80))
        raw = rng.integers(0, 12, n)
        ids: dict[int, int] = {}
        acts = [ids.setdefault(int(x), len(ids)) for x in raw]
        trajs.append((rng.integers(0, 6, n).tolist(), rng.integers(0, 2, n).tolist(), acts))
    states = [(rng.integers(0, 36, len(c)).tolist(), rng.integers(0, 2, len(c)).tolist()) for c, _, _ in trajs]
    k, levels = 119, 43
    y = rng.normal(0, 0.3, k)
    v = rng.uniform(0.005, 0.05, k)
    labels = np.arange(k) % levels
    perms = np.array([rng.permutation(k) for _ in range(2000)])
    idx = np.broadcast_to(np.arange(k), perms.shape)
    return trajs, states, (y, v, idx, labels[perms], levels)


def cases(mod, inputs):
    trajs, states, (y, v, idx, labs, levels) = inputs
    return {
        "trajectory_stats x2000": lambda: [mod.trajectory_stats(*t) for t in trajs],
        "motif_stats x2000": lambda: [mod.motif_stats(s, p) for s, p in states],
        "moderator_r2_many 2000x119": lambda: mod.moderator_r2_many(y, v, idx, labs, levels),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    inputs = make_inputs(args.seed)
    py_cases = cases(py, inputs)
    cy_cases = cases(cy, inputs) if cy is not None else {}
    print(f"{'kernel':<28}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name, fn in py_cases.items():
        t_py = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        if name in cy_cases:
            t_cy = min(timeit.repeat(cy_cases[name], number=1, repeat=args.repeat))
            print(f"{name:<28}{t_py:>10.4f}{t_cy:>10.4f}{t_py / t_cy:>8.1f}x")
        else:
            print(f"{name:<28}{t_py:>10.4f}{'n/a':>10}{'':>9}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
