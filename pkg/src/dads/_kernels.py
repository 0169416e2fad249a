"""Hot inner loops, compiled with numba when available.

Set ``DADS_NO_NUMBA=1`` to force the pure-numpy implementations. Both paths
are always importable so tests and the benchmark can compare them directly.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("DADS_NO_NUMBA", "0") != "1"


# -- dimension-coupled objective: f(A) = sum_l sqrt(sum_{j in A} E[j, l]^2) ---

@njit(cache=True)
def _coupled_gains_nb(E, colsum, targets):
    out = np.empty(targets.size)
    n = E.shape[1]
    for t in range(targets.size):
        j = targets[t]
        g = 0.0
        for d in range(n):
            e = E[j, d]
            if e != 0.0:
                s = colsum[d]
                g += np.sqrt(s) - np.sqrt(s + e * e)
        out[t] = g
    return out


def _coupled_gains_np(E, colsum, targets):
    rows = E[targets]
    terms = np.sqrt(colsum) - np.sqrt(colsum + rows * rows)
    # zero error entries contribute an exact 0.0; drop them so the summation
    # order matches the compiled loop
    terms = np.where(rows != 0.0, terms, 0.0)
    out = np.zeros(targets.size)
    for d in range(E.shape[1]):
        out = out + terms[:, d]
    return out


# -- stacked-norm objective: f(A) = sqrt(sum_{j in A} ||E[j]||^2) --------------

@njit(cache=True)
def _stacked_gains_nb(rowsq, total, targets):
    out = np.empty(targets.size)
    base = np.sqrt(total)
    for t in range(targets.size):
        out[t] = base - np.sqrt(total + rowsq[targets[t]])
    return out


def _stacked_gains_np(rowsq, total, targets):
    return np.sqrt(total) - np.sqrt(total + rowsq[targets])


# -- occupancy: number of distinct subset labels hit by each draw --------------

@njit(cache=True)
def _count_hit_subsets_nb(picks, labels, m):
    draws, d = picks.shape
    out = np.zeros(draws, dtype=np.int64)
    seen = np.zeros(m, dtype=np.int64)
    for r in range(draws):
        stamp = r + 1
        c = 0
        for t in range(d):
            g = labels[picks[r, t]]
            if seen[g] != stamp:
                seen[g] = stamp
                c += 1
        out[r] = c
    return out


def _count_hit_subsets_np(picks, labels, m):
    hit = np.zeros((picks.shape[0], m), dtype=bool)
    rows = np.repeat(np.arange(picks.shape[0]), picks.shape[1])
    hit[rows, labels[picks].ravel()] = True
    return hit.sum(axis=1).astype(np.int64)


# -- exhaustive best q-subset for the dimension-coupled objective ---------------

@njit(cache=True)
def _best_coupled_subset_nb(sq, q):
    n, dims = sq.shape
    idx = np.arange(q)
    best = idx.copy()
    best_v = -1.0
    while True:
        v = 0.0
        for d in range(dims):
            s = 0.0
            for t in range(q):
                s += sq[idx[t], d]
            v += np.sqrt(s)
        if v > best_v:
            best_v = v
            best[:] = idx
        # advance to the next combination in lexicographic order
        t = q - 1
        while t >= 0 and idx[t] == n - q + t:
            t -= 1
        if t < 0:
            break
        idx[t] += 1
        for u in range(t + 1, q):
            idx[u] = idx[u - 1] + 1
    return best, best_v


def _best_coupled_subset_np(sq, q, chunk: int = 65536):
    import itertools

    n, dims = sq.shape
    best, best_v = np.arange(q), -1.0
    it = itertools.combinations(range(n), q)
    while True:
        block = np.fromiter(itertools.islice(it, chunk), dtype=np.dtype((np.int64, q)))
        if block.size == 0:
            break
        v = np.zeros(block.shape[0])
        for d in range(dims):
            s = np.zeros(block.shape[0])
            for t in range(q):
                s = s + sq[block[:, t], d]
            v = v + np.sqrt(s)
        k = int(np.argmax(v))   # first maximum, matching the strict comparison above
        if v[k] > best_v:
            best_v = float(v[k])
            best = block[k].copy()
    return best, best_v


def best_coupled_subset(sq, q, use_numba: bool | None = None):
    """Lexicographically first maximiser of ``sum_d sqrt(sum_{t} sq[t, d])``."""
    fn = _best_coupled_subset_nb if (USE_NUMBA if use_numba is None else use_numba) else _best_coupled_subset_np
    best, v = fn(np.ascontiguousarray(sq, dtype=np.float64), int(q))
    return np.asarray(best, dtype=np.int64), float(v)


def coupled_gains(E, colsum, targets, use_numba: bool | None = None):
    fn = _coupled_gains_nb if (USE_NUMBA if use_numba is None else use_numba) else _coupled_gains_np
    return fn(np.ascontiguousarray(E, dtype=np.float64),
              np.ascontiguousarray(colsum, dtype=np.float64),
              np.ascontiguousarray(targets, dtype=np.int64))


def stacked_gains(rowsq, total, targets, use_numba: bool | None = None):
    fn = _stacked_gains_nb if (USE_NUMBA if use_numba is None else use_numba) else _stacked_gains_np
    return fn(np.ascontiguousarray(rowsq, dtype=np.float64), float(total),
              np.ascontiguousarray(targets, dtype=np.int64))


def count_hit_subsets(picks, labels, m, use_numba: bool | None = None):
    fn = _count_hit_subsets_nb if (USE_NUMBA if use_numba is None else use_numba) else _count_hit_subsets_np
    return fn(np.ascontiguousarray(picks, dtype=np.int64),
              np.ascontiguousarray(labels, dtype=np.int64), int(m))
