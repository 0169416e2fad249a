"""Evaluation quantities: optimization rate, RMSE curves and subset occupancy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ContractViolation
from .partition import PartitionResult, balanced_cardinality
from .selection import ErrorMatrix, ObjectiveKind, objective, optimal_set, windowed_rmse


@dataclass
class RateResult:
    rate: float
    steps_used: int
    steps_excluded: int
    surrogate: bool          # some denominator came from the greedy surrogate
    exceeded_one: bool       # a ratio above 1 was observed (surrogate only)


@dataclass
class OptRateReport:
    algorithm: str
    stage1: str
    family: str
    per_subset: list[RateResult]
    subset_average: float
    overall: RateResult
    labels: dict = field(default_factory=dict)


def _ratio(kind, em: ErrorMatrix, chosen: Sequence[int], pool: Sequence[int] | None):
    opt = optimal_set(kind, em, len(chosen), pool)
    if opt.value <= 0.0:
        return None, opt.exact
    return objective(kind, em, chosen) / opt.value, opt.exact


def _summarise(ratios: list[float], excluded: int, surrogate: bool) -> RateResult:
    if not ratios:
        return RateResult(float("nan"), 0, excluded, surrogate, False)
    r = np.asarray(ratios)
    return RateResult(float(r.mean()), r.size, excluded, surrogate, bool(np.any(r > 1.0)))


def optimization_rate(selected: Sequence[Sequence[int]], errors: Sequence[ErrorMatrix],
                      kind, q: int | None = None, scope: str = "total",
                      partition: PartitionResult | None = None,
                      subset: int | None = None) -> RateResult:
    """Time-averaged ``f(A_k) / f(A*_k)``.

    ``scope="total"`` compares the whole selected set against the best set of
    size ``q`` (default ``|A_k|``) over all candidates. ``scope="subset"``
    restricts both to subset ``subset`` of ``partition``: the optimum is the
    best set of size ``|A_k ∩ N_g|`` inside ``N_g``. Steps with a zero
    denominator, or an empty selection in the subset, are excluded and counted.
    """
    kind = ObjectiveKind(kind)
    if len(selected) != len(errors):
        raise ContractViolation("selected sets and error matrices are misaligned")
    if len(selected) == 0:
        raise ContractViolation("optimization rate needs at least one step")
    if scope not in ("total", "subset"):
        raise ContractViolation(f"unknown scope {scope!r}")
    if scope == "subset" and (partition is None or subset is None):
        raise ContractViolation("subset scope needs a partition and a subset index")
    ratios: list[float] = []
    excluded = 0
    surrogate = False
    pool = partition.subsets[subset] if scope == "subset" else None
    for A_k, em in zip(selected, errors):
        if scope == "subset":
            chosen = sorted(set(A_k) & set(pool))
            if not chosen:
                excluded += 1
                continue
        else:
            chosen = sorted(set(A_k))
            if q is not None and len(chosen) != q:
                raise ContractViolation(f"selected set has {len(chosen)} members, expected {q}")
        r, exact = _ratio(kind, em, chosen, pool)
        surrogate |= not exact
        if r is None:
            excluded += 1
            continue
        ratios.append(r)
    return _summarise(ratios, excluded, surrogate)


def subset_average_rate(selected, errors, kind, partition: PartitionResult) -> tuple[float, list[RateResult]]:
    """Mean of the per-subset rates over the subsets that had any selection."""
    per = [optimization_rate(selected, errors, kind, scope="subset", partition=partition, subset=g)
           for g in range(partition.m)]
    vals = [r.rate for r in per if r.steps_used]
    return (float(np.mean(vals)) if vals else float("nan")), per


def opt_rate_report(algorithm: str, stage1: str, family: str, selected, errors, kind,
                    partition: PartitionResult) -> OptRateReport:
    avg, per = subset_average_rate(selected, errors, kind, partition)
    overall = optimization_rate(selected, errors, kind, scope="total")
    return OptRateReport(algorithm, stage1, family, per, avg, overall)


# -- estimation error curves ----------------------------------------------------

def error_curve(error_norms: np.ndarray, case: str) -> np.ndarray:
    """Per-step curve from ``(steps, sensors)`` error norms.

    The attack-free case averages over sensors; attacked cases take the worst
    sensor at each step.
    """
    e = np.asarray(error_norms, dtype=np.float64)
    if e.ndim != 2:
        raise ContractViolation("error norms must be (steps, sensors)")
    return e.mean(axis=1) if case == "no_attack" else e.max(axis=1)


def rmse_curves(runs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    lengths = {np.asarray(v).shape[0] for v in runs.values()}
    if len(lengths) > 1:
        raise ContractViolation("runs have misaligned time axes")
    return {case: error_curve(v, case) for case, v in runs.items()}


def windowed_curve(curve: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing-window RMSE of a per-step error curve."""
    c = np.asarray(curve, dtype=np.float64)
    return windowed_rmse(c * c, window)


# -- occupancy -------------------------------------------------------------------

def occupancy_analytic(N: int, m: int, d: int) -> tuple[float, float]:
    """Expected number and fraction of subsets hit by ``d`` uniform draws."""
    if not 0 <= d <= N:
        raise ContractViolation(f"d={d} outside [0, {N}]")
    # exact rational sum, rounded once, so monotonicity survives float rounding
    total = math.comb(N, d)
    exact = sum(Fraction(total - math.comb(N - s, d), total) for s in balanced_cardinality(N, m))
    return float(exact), float(exact / m)


def occupancy_montecarlo(N: int, m: int, d: int, rng: np.random.Generator,
                         draws: int = 10_000, use_numba: bool | None = None) -> tuple[float, float]:
    if not 0 <= d <= N:
        raise ContractViolation(f"d={d} outside [0, {N}]")
    labels = np.repeat(np.arange(m), balanced_cardinality(N, m))
    if d == 0:
        return 0.0, 0.0
    # argsort of uniform keys gives an independent uniform permutation per row
    picks = np.argsort(rng.random((draws, N)), axis=1)[:, :d]
    hits = _kernels.count_hit_subsets(picks, labels, m, use_numba)
    E = float(hits.mean())
    return E, E / m


def occupancy(N: int, m: int, d: int, mode: str = "analytic",
              rng: np.random.Generator | None = None, draws: int = 10_000) -> tuple[float, float]:
    if mode == "analytic":
        return occupancy_analytic(N, m, d)
    if mode == "montecarlo":
        if rng is None:
            raise ContractViolation("Monte Carlo occupancy needs an rng")
        return occupancy_montecarlo(N, m, d, rng, draws)
    raise ContractViolation(f"unknown occupancy mode {mode!r}")
