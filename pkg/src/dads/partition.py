"""Partitioning a neighbor set by the geometry of observable supports.

Each sensor is summarised by its indicator bit vector (which state dimensions
it can observe). Two sensors with identical indicators are *fully correlated*,
overlapping ones *partially correlated*, disjoint ones *uncorrelated*.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InfeasiblePartitionError, UndefinedSubspaceError


class Strategy(str, Enum):
    GRASSMANN = "grassmann"
    GRASSMANN_IMPROVED = "grassmann_improved"
    MIN_MUTUAL = "min_mutual"
    RANDOM = "random"
    BALANCED_CARDINALITY = "balanced_cardinality"


@dataclass
class PartitionResult:
    strategy: Strategy
    subsets: list[list[int]]
    distance_evals: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        self.subsets = [sorted(int(j) for j in g) for g in self.subsets]

    @property
    def m(self) -> int:
        return len(self.subsets)

    def members(self) -> list[int]:
        return sorted(j for g in self.subsets for j in g)

    def label_of(self) -> dict[int, int]:
        return {j: g for g, sub in enumerate(self.subsets) for j in sub}

    def is_partition_of(self, ids) -> bool:
        flat = [j for g in self.subsets for j in g]
        return len(flat) == len(set(flat)) and set(flat) == set(ids)

    def canonical(self) -> frozenset:
        return frozenset(frozenset(g) for g in self.subsets)


def _bits(v) -> np.ndarray:
    return np.asarray(getattr(v, "indicator", v)).astype(np.int64).ravel()


def mutual_influence(ind1, ind2) -> int:
    """Number of dimensions observed by both sensors."""
    a, b = _bits(ind1), _bits(ind2)
    if a.shape != b.shape:
        raise ContractViolation(f"indicator dims differ: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a & b))


def grassmann_distance(ind1, ind2) -> float:
    """Angle in radians between two indicator vectors."""
    a, b = _bits(ind1), _bits(ind2)
    if a.shape != b.shape:
        raise ContractViolation(f"indicator dims differ: {a.shape} vs {b.shape}")
    na2, nb2, dot = int(a @ a), int(b @ b), int(a @ b)
    if na2 == 0 or nb2 == 0:
        raise UndefinedSubspaceError("zero indicator vector spans no subspace")
    # integer test first: sqrt(2) * sqrt(2) rounds above 2 in floating point
    if dot * dot == na2 * nb2:
        return 0.0
    cos = dot / math.sqrt(na2 * nb2)
    # bit vectors have nonnegative cosine; clamp away rounding past 1
    return math.acos(min(max(cos, 0.0), 1.0))


def balanced_cardinality(count: int, m: int) -> list[int]:
    """Subset sizes differing by at most one, larger subsets first."""
    if m < 1:
        raise InfeasiblePartitionError("subset count must be >= 1")
    if m > count:
        raise InfeasiblePartitionError(f"cannot split {count} elements into {m} subsets")
    base, extra = divmod(count, m)
    return [base + 1 if g < extra else base for g in range(m)]


def _sorted_sensors(sensors) -> list:
    sensors = sorted(sensors, key=lambda s: s.id)
    for s in sensors:
        if not np.any(s.indicator):
            raise UndefinedSubspaceError(f"sensor {s.id} has an all-zero indicator")
    return sensors


def pairwise_distances(sensors) -> np.ndarray:
    """Symmetric Grassmann distance matrix; costs ``C(n, 2)`` evaluations."""
    n = len(sensors)
    D = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            D[a, b] = D[b, a] = grassmann_distance(sensors[a].indicator, sensors[b].indicator)
    return D


def _grassmann_scan(sensors) -> tuple[list[list[int]], int]:
    # all pairs are evaluated up front, then each sensor joins the first group
    # whose representative sits at distance zero
    D = pairwise_distances(sensors)
    n = len(sensors)
    groups: list[list[int]] = []
    for a in range(n):
        for g in groups:
            if D[a, g[0]] == 0.0:
                g.append(a)
                break
        else:
            groups.append([a])
    return [[sensors[a].id for a in g] for g in groups], n * (n - 1) // 2


def partition_grassmann(sensors) -> PartitionResult:
    """Group sensors whose indicators are at Grassmann distance zero.

    Each sensor is compared with the first member of every existing group and
    opens a new group when none matches.
    """
    subsets, evals = _grassmann_scan(_sorted_sensors(sensors))
    return PartitionResult(Strategy.GRASSMANN, subsets, evals)


def partition_grassmann_improved(sensors) -> PartitionResult:
    """Bucket by observable rank first, then run the Grassmann scan per bucket."""
    sensors = _sorted_sensors(sensors)
    rank_groups: dict[int, list] = {}
    for s in sensors:
        rank_groups.setdefault(s.rank, []).append(s)
    subsets: list[list[int]] = []
    evals = 0
    for r in sorted(rank_groups):
        sub, e = _grassmann_scan(rank_groups[r])
        subsets.extend(sub)
        evals += e
    subsets.sort(key=lambda g: min(g))
    return PartitionResult(Strategy.GRASSMANN_IMPROVED, subsets, evals,
                           meta={"rank_groups": {r: len(v) for r, v in rank_groups.items()}})


def partition_min_mutual(sensors) -> PartitionResult:
    """Connected components of the overlap graph: zero cross-subset influence."""
    sensors = _sorted_sensors(sensors)
    n = len(sensors)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    bits = np.array([_bits(s) for s in sensors]) if n else np.zeros((0, 0), int)
    overlap = (bits @ bits.T) > 0 if n else np.zeros((0, 0), bool)
    for a in range(n):
        for b in np.flatnonzero(overlap[a, a + 1:]) + a + 1:
            ra, rb = find(a), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    comps: dict[int, list[int]] = {}
    for a in range(n):
        comps.setdefault(find(a), []).append(sensors[a].id)
    subsets = sorted(comps.values(), key=min)
    return PartitionResult(Strategy.MIN_MUTUAL, subsets, 0)


def partition_random(ids: Sequence[int], m: int, rng: np.random.Generator) -> PartitionResult:
    """Uniform random assignment into balanced-cardinality subsets."""
    ids = sorted(int(j) for j in ids)
    sizes = balanced_cardinality(len(ids), m)
    perm = rng.permutation(len(ids))
    subsets, start = [], 0
    for size in sizes:
        subsets.append([ids[p] for p in perm[start:start + size]])
        start += size
    return PartitionResult(Strategy.RANDOM, subsets, 0)


def partition_balanced(ids: Sequence[int], m: int) -> PartitionResult:
    """Contiguous balanced-cardinality blocks in ascending id order."""
    ids = sorted(int(j) for j in ids)
    subsets, start = [], 0
    for size in balanced_cardinality(len(ids), m):
        subsets.append(ids[start:start + size])
        start += size
    return PartitionResult(Strategy.BALANCED_CARDINALITY, subsets, 0)


@dataclass
class InfluenceReport:
    inter: np.ndarray   # m x m, diagonal is NaN
    intra: np.ndarray   # m


def influence_report(partition: PartitionResult, sensors) -> InfluenceReport:
    """Cross-subset partial-correlation counts and within-subset full correlation.

    ``inter[g, q]`` counts ordered pairs ``(a in g, b in q)`` whose supports
    overlap without being identical. ``intra[g]`` is the fraction of ordered
    pairs in ``g`` (diagonal included) with identical supports.
    """
    by_id = {s.id: s for s in sensors}
    if not partition.is_partition_of(by_id):
        raise ContractViolation("partition does not cover the given sensors")
    bits = [np.array([_bits(by_id[j]) for j in g]) for g in partition.subsets]
    m = partition.m
    inter = np.full((m, m), np.nan)
    intra = np.zeros(m)
    for g in range(m):
        Bg = bits[g]
        same = (Bg[:, None, :] == Bg[None, :, :]).all(axis=2)
        intra[g] = same.mean()
        for q in range(m):
            if q == g:
                continue
            Bq = bits[q]
            overlap = (Bg @ Bq.T) > 0
            ident = (Bg[:, None, :] == Bq[None, :, :]).all(axis=2)
            inter[g, q] = np.count_nonzero(overlap & ~ident)
    return InfluenceReport(inter, intra)


def reduction_formula(total: int, m_prime: int) -> float:
    """Closed-form distance-count reduction quoted with the improved scan."""
    return (total ** 2 * (m_prime - 1) + total) / (2 * m_prime)


def exact_reduction(total: int, m_prime: int) -> float:
    """``C(N,2) - m' * C(N/m', 2)``, i.e. ``N^2 (m'-1) / (2 m')``."""
    return total ** 2 * (m_prime - 1) / (2 * m_prime)
