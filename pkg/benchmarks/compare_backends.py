#!/usr/bin/env python3
"""Benchmark the compiled backend against the pure-numpy fallback.

Usage: python benchmarks/compare_backends.py [--members 512] [--depth 100]
"""

import argparse
import time

import numpy as np

from kernelflow import NetworkConfig, SeedPolicy, run_ensemble
from kernelflow.simulate import available_backends


def bench(backend: str, cfg: NetworkConfig, seeds: SeedPolicy, members: int,
          threads: int | None) -> tuple[float, np.ndarray]:
    t0 = time.perf_counter()
    acc = run_ensemble(cfg, seeds, members, backend=backend, threads=threads)
    return time.perf_counter() - t0, acc.dyadic.totals()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--members", type=int, default=512)
    parser.add_argument("--depth", type=int, default=100)
    parser.add_argument("--width", type=int, default=64)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    cfg = NetworkConfig(n=args.width, n_points=4, depth=args.depth, eps=0.1)
    seeds = SeedPolicy(20260809)
    backends = available_backends()
    if "numba" in backends:
        # warm the JIT outside the timed region
        run_ensemble(cfg, seeds, 2, backend="numba", threads=args.threads)

    results = {}
    for backend in backends:
        dt, totals = bench(backend, cfg, seeds, args.members, args.threads)
        results[backend] = (dt, totals)
        rate = args.members / dt
        print(f"{backend:>6}: {dt:8.2f} s   {rate:9.1f} members/s")

    if len(results) == 2:
        (t_nb, tot_nb), (t_np, tot_np) = results["numba"], results["numpy"]
        rel = np.abs(tot_nb - tot_np).max() / np.abs(tot_np).max()
        print(f"speedup numba/numpy: {t_np / t_nb:.1f}x")
        print(f"max relative statistic difference: {rel:.2e}")


if __name__ == "__main__":
    main()
