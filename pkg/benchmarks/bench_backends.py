#!/usr/bin/env python3
"""Benchmark the compiled GMM-EKF kernel against the pure-Python fallback.

Workload: the default estimation benchmark (600-step log, two lane
hypotheses), repeated; reports per-backend wall time, steps/second, and the
worst cross-backend deviation of the aggregate lateral estimate.

Usage: python3 benchmarks/bench_backends.py [--repeats N]
"""
import argparse
import time

import numpy as np

from advisor import driver as drv
from advisor import scenario as scn
from advisor._backend import HAVE_COMPILED


def run(backend: str, log, cfg, p, repeats: int):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = scn.run_estimation(
            log, p, cfg.vehicle, cfg.noise, cfg.hypotheses, backend=backend
        )
        times.append(time.perf_counter() - t0)
    return min(times), out


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    cfg = scn.default_scenario(seed=0)
    log = scn.run_closed_loop(cfg)
    p = drv.synthetic_default()
    steps = len(log)

    t_py, out_py = run("python", log, cfg, p, args.repeats)
    print(f"python   backend: {t_py * 1e3:8.1f} ms  ({steps / t_py:9.0f} steps/s)")
    if not HAVE_COMPILED:
        print("compiled backend: not built in this installation")
        return
    t_c, out_c = run("compiled", log, cfg, p, args.repeats)
    print(f"compiled backend: {t_c * 1e3:8.1f} ms  ({steps / t_c:9.0f} steps/s)")
    print(f"speedup: {t_py / t_c:.1f}x")
    dev = np.max(np.abs(out_py.est_means - out_c.est_means))
    print(f"max |aggregate mean deviation| between backends: {dev:.3e}")


if __name__ == "__main__":
    main()
