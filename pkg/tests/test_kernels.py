import itertools
import os
import subprocess
import sys

import numpy as np
import pytest

from dads import _kernels

pytestmark = pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba missing")


def test_coupled_gains_backends_identical():
    rng = np.random.default_rng(0)
    for _ in range(50):
        E = rng.normal(size=(30, 4)) * (rng.random((30, 4)) < 0.5)
        colsum = (E[:10] ** 2).sum(axis=0)
        t = np.arange(10, 30, dtype=np.int64)
        assert np.array_equal(_kernels.coupled_gains(E, colsum, t, True),
                              _kernels.coupled_gains(E, colsum, t, False))


def test_stacked_gains_backends_identical():
    rng = np.random.default_rng(1)
    rowsq = rng.random(40)
    t = np.arange(40, dtype=np.int64)
    assert np.array_equal(_kernels.stacked_gains(rowsq, 3.5, t, True),
                          _kernels.stacked_gains(rowsq, 3.5, t, False))


def test_best_subset_backends_and_brute():
    rng = np.random.default_rng(2)
    for _ in range(30):
        n, q = int(rng.integers(5, 11)), int(rng.integers(1, 4))
        sq = rng.random((n, 4)) ** 2
        a = _kernels.best_coupled_subset(sq, q, True)
        b = _kernels.best_coupled_subset(sq, q, False)
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]
        vals = {c: np.sqrt(sq[list(c)].sum(axis=0)).sum() for c in itertools.combinations(range(n), q)}
        best = max(vals.values())
        assert a[1] == pytest.approx(best, rel=1e-12)
        # first maximum in lexicographic order
        first = next(c for c in itertools.combinations(range(n), q) if vals[c] >= best - 1e-12)
        assert tuple(a[0]) == first


def test_count_hit_subsets_backends_and_brute():
    rng = np.random.default_rng(3)
    picks = np.argsort(rng.random((500, 30)), axis=1)[:, :7]
    labels = np.repeat(np.arange(6), 5)
    a = _kernels.count_hit_subsets(picks, labels, 6, True)
    b = _kernels.count_hit_subsets(picks, labels, 6, False)
    assert np.array_equal(a, b)
    assert np.array_equal(a, [len(set(labels[p])) for p in picks])


def test_env_flag_selects_numpy():
    code = "from dads import _kernels; print(_kernels.USE_NUMBA)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={**os.environ, "DADS_NO_NUMBA": "1"}, check=True)
    assert out.stdout.strip() == "False"
