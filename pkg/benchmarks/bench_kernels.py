"""Compare the compiled and pure-numpy kernels on star100-sized inputs.

Run ``python3 benchmarks/bench_kernels.py``. Each kernel is called once per
backend before timing so numba compilation is not counted.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dads import _kernels


def _time(fn, repeat: int) -> float:
    fn()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def cases(rng):
    E = rng.normal(size=(100, 4))
    E[:, [0, 2]] *= rng.random(100)[:, None] < 0.5
    colsum = (E[:40] ** 2).sum(axis=0)
    targets = np.arange(40, 100, dtype=np.int64)
    sq = rng.random((25, 4))
    picks = np.argsort(rng.random((10_000, 100)), axis=1)[:, :40]
    labels = np.repeat(np.arange(20), 5)
    return {
        "coupled_gains (60 targets)": (lambda nb: _kernels.coupled_gains(E, colsum, targets, nb), 2000),
        "best_coupled_subset (C(25,4))": (lambda nb: _kernels.best_coupled_subset(sq, 4, nb), 20),
        "count_hit_subsets (1e4 x 40)": (lambda nb: _kernels.count_hit_subsets(picks, labels, 20, nb), 20),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _kernels.NUMBA_AVAILABLE:
        print("numba not importable; only the numpy path can run")
    print(f"{'kernel':32s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, (fn, repeat) in cases(np.random.default_rng(args.seed)).items():
        t_np = _time(lambda: fn(False), repeat)
        if _kernels.NUMBA_AVAILABLE:
            a, b = fn(True), fn(False)
            pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
            same = all(np.array_equal(x, y) for x, y in pairs)
            t_nb = _time(lambda: fn(True), repeat)
            print(f"{name:32s} {t_nb * 1e3:11.3f} {t_np * 1e3:11.3f} {t_np / t_nb:7.1f}x"
                  f"{'' if same else '  (results differ!)'}")
        else:
            print(f"{name:32s} {'-':>11s} {t_np * 1e3:11.3f}")


if __name__ == "__main__":
    main()
