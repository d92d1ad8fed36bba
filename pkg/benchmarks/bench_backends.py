"""Wall-clock comparison of the numba kernels and the pure-numpy fallback.

    python benchmarks/bench_backends.py [--R 200] [--repeat 3]

Both backends run the same replicates; the script also checks that they agree.
"""
import argparse
import dataclasses
import time

import numpy as np

from budsim.config import bundled_config, load_config
from budsim.montecarlo import simulate_batch

SCENARIOS = {"binary": 10000, "normal": 10000, "weibull": 1000}


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = fn()
        best = min(best, time.perf_counter() - t0)
    return best, res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    print(f"{'scenario':<10}{'n':>7}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max|dp|':>11}")
    for name, n in SCENARIOS.items():
        cfg = load_config(bundled_config(name)).design
        cfg = dataclasses.replace(cfg, n=n)
        run = lambda b: simulate_batch(cfg, args.R, [n], threads=args.threads, backend=b)
        simulate_batch(cfg, 2, [n], threads=1, backend="numba")  # compile outside the timer
        tn, rn = timed(lambda: run("numba"), args.repeat)
        tp, rp = timed(lambda: run("numpy"), args.repeat)
        dp = float(np.nanmax(np.abs(rn.p - rp.p)))
        print(f"{name:<10}{n:>7}{tn:>10.3f}{tp:>10.3f}{tp / tn:>9.1f}{dp:>11.2e}")


if __name__ == "__main__":
    main()
