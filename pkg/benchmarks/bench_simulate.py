"""Timing comparison of the compiled and pure-Python synthesis loops.

Draws a few parameter records, runs both backends on identical inputs,
and reports per-signal wall time plus the worst relative sample
difference.  Run from the repo root:

    python3 benchmarks/bench_simulate.py [--duration 1.1] [--n 5]
"""

import argparse
import time

import numpy as np

from subvox import waveguide
from subvox.dataset import sample_params


def time_backend(params_list, duration, backend, repeats=3):
    best = []
    for p in params_list:
        runs = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            waveguide.simulate(p, duration=duration, backend=backend)
            runs.append(time.perf_counter() - t0)
        best.append(min(runs))
    return np.asarray(best)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration", type=float, default=1.1)
    ap.add_argument("--n", type=int, default=5, help="parameter draws")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    params_list = [sample_params(rng, 1 + i % 4) for i in range(args.n)]

    if "ext" not in waveguide.available_backends():
        print("compiled backend not built; timing python only")
        tp = time_backend(params_list, args.duration, "python", repeats=1)
        print("python: %.1f ms/signal" % (1e3 * tp.mean()))
        return

    # warm both paths once so import/alloc cost stays out of the numbers
    waveguide.simulate(params_list[0], duration=0.05, backend="ext")
    waveguide.simulate(params_list[0], duration=0.05, backend="python")

    te = time_backend(params_list, args.duration, "ext")
    tp = time_backend(params_list, args.duration, "python", repeats=1)

    worst = 0.0
    for p in params_list:
        se = waveguide.simulate(p, duration=args.duration, backend="ext")
        sp = waveguide.simulate(p, duration=args.duration, backend="python")
        scale = max(np.abs(sp.samples).max(), 1e-3)
        worst = max(worst, np.abs(se.samples - sp.samples).max() / scale)

    n_samp = int(round(args.duration * 44100))
    print("%d draws, %.2f s audio (%d samples) each" %
          (args.n, args.duration, n_samp))
    print("ext:    %7.1f ms/signal  (%.0f ns/sample)" %
          (1e3 * te.mean(), 1e9 * te.mean() / n_samp))
    print("python: %7.1f ms/signal  (%.0f ns/sample)" %
          (1e3 * tp.mean(), 1e9 * tp.mean() / n_samp))
    print("speedup: %.1fx" % (tp.mean() / te.mean()))
    print("worst relative sample difference: %.2e" % worst)


if __name__ == "__main__":
    main()
