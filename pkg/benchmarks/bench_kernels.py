"""Time the numba kernels against their pure-numpy twins on synthetic batches.

    python benchmarks/bench_kernels.py --batch 64 --channels 12 --grid 64 --repeat 5
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from mmfusion import kernels
from mmfusion.interp import KAPPA, ObservationBatch, reference_grid
from mmfusion.series import SyntheticConfig, synthesize


def make_inputs(batch, channels, T, hours, seed):
    ds = synthesize(SyntheticConfig(n_records=batch, n_channels=channels, horizon=hours,
                                    seed=seed))
    obs = ObservationBatch.from_records(ds.records, ds.D)
    grid = reference_grid(hours, T)
    alpha = np.full(channels, 1.0 / (grid[1] - grid[0]) ** 2)
    return obs, grid, alpha


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--channels", type=int, default=12)
    ap.add_argument("--grid", type=int, default=64, help="reference points T")
    ap.add_argument("--hours", type=float, default=48.0)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    obs, grid, alpha = make_inputs(args.batch, args.channels, args.grid, args.hours, args.seed)
    t, v, m = obs.times, obs.values, obs.mask
    rng = np.random.default_rng(args.seed)
    g_smooth = rng.normal(size=(args.batch, 3, args.channels, args.grid))
    g_loo = rng.normal(size=(args.batch, args.channels, t.shape[2], args.channels, 2))
    calls = {
        "smooth_fwd": lambda k: k(t, v, m, grid, alpha, KAPPA),
        "smooth_bwd": lambda k: k(t, v, m, grid, alpha, KAPPA, g_smooth),
        "loo_fwd": lambda k: k(t, v, m, alpha),
        "loo_bwd": lambda k: k(t, v, m, alpha, g_loo),
    }
    print(f"B={args.batch} D={args.channels} L={t.shape[2]} T={args.grid} "
          f"(best of {args.repeat})")
    print(f"{'kernel':<12}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, call in calls.items():
        fast, slow = kernels.kernel(name, "numba"), kernels.kernel(name, "numpy")
        diff = np.max(np.abs(call(fast) - call(slow)))  # first call also compiles
        t_fast = min(timeit.repeat(lambda: call(fast), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: call(slow), number=1, repeat=args.repeat))
        print(f"{name:<12}{t_fast * 1e3:>10.2f}{t_slow * 1e3:>10.2f}"
              f"{t_slow / t_fast:>8.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()
