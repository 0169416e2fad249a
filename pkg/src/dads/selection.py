"""Submodular detection objective and the (distributed) attack detection scheduler.

A receiving sensor assembles the masked disagreement ``e_j`` with every
in-neighbor ``j`` and scores a suspect set ``A`` by one of two monotone
submodular objectives:

``stacked_norm``        ``sqrt(sum_{j in A} ||e_j||^2)``
``dimension_coupled``   ``sum_l sqrt(sum_{j in A} e_{jl}^2)``

The scheduler runs ``q`` selection rounds. Each round refreshes the marginal
gains ``G_j = f(A) - f(A + j)`` of a method-dependent set of candidates,
multiplies their weights by ``exp(-G_j)``, lets every subset nominate one
member from its normalised weights (stage 1), and keeps one nominee chosen
uniformly at random (stage 2).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import AttackConstraintError, ContractViolation

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 200_000


class ObjectiveKind(str, Enum):
    STACKED_NORM = "stacked_norm"
    DIMENSION_COUPLED = "dimension_coupled"


class GainUpdateMethod(str, Enum):
    M1_PARTITION_SUBSET = "m1_partition_subset"
    M2_PARTITION_RELATED = "m2_partition_related"
    M3_RANDOM_SUBSET = "m3_random_subset"
    M4_RANDOM_RELATED = "m4_random_related"
    M5_FULL = "m5_full"

    @classmethod
    def parse(cls, value) -> "GainUpdateMethod":
        if isinstance(value, cls):
            return value
        short = {"m1": cls.M1_PARTITION_SUBSET, "m2": cls.M2_PARTITION_RELATED,
                 "m3": cls.M3_RANDOM_SUBSET, "m4": cls.M4_RANDOM_RELATED, "m5": cls.M5_FULL}
        return short.get(str(value), None) or cls(value)


class Stage1(str, Enum):
    PROBABILITY = "probability"
    RANKING = "ranking"


@dataclass
class ErrorMatrix:
    """Masked disagreement columns, one row per candidate id (ascending)."""

    ids: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.E = np.asarray(self.E, dtype=np.float64)
        if self.E.ndim != 2 or self.E.shape[0] != self.ids.size:
            raise ContractViolation(f"error matrix shape {self.E.shape} vs {self.ids.size} ids")
        if np.any(np.diff(self.ids) <= 0):
            order = np.argsort(self.ids, kind="stable")
            self.ids, self.E = self.ids[order], self.E[order]
        self._pos = {int(j): k for k, j in enumerate(self.ids)}

    @classmethod
    def from_columns(cls, columns: dict[int, np.ndarray]) -> "ErrorMatrix":
        ids = sorted(columns)
        return cls(np.array(ids), np.array([columns[j] for j in ids]).reshape(len(ids), -1))

    def positions(self, ids: Iterable[int]) -> np.ndarray:
        try:
            return np.array([self._pos[int(j)] for j in ids], dtype=np.int64)
        except KeyError as exc:
            raise ContractViolation(f"unknown candidate id {exc.args[0]}") from None

    @property
    def size(self) -> int:
        return self.ids.size


def _value(kind: ObjectiveKind, E: np.ndarray, pos: np.ndarray) -> float:
    if pos.size == 0:
        return 0.0
    rows = E[pos]
    if kind is ObjectiveKind.STACKED_NORM:
        return float(np.sqrt(np.sum(rows * rows)))
    return float(np.sum(np.sqrt(np.sum(rows * rows, axis=0))))


def objective(kind, errors: ErrorMatrix, ids: Iterable[int]) -> float:
    kind = ObjectiveKind(kind)
    return _value(kind, errors.E, errors.positions(sorted(set(ids))))


class _GainTracker:
    """Incremental marginal gains relative to a growing selected set."""

    def __init__(self, kind: ObjectiveKind, E: np.ndarray):
        self.kind = kind
        self.E = E
        self.sq = E * E
        self.rowsq = self.sq.sum(axis=1)
        self.colsum = np.zeros(E.shape[1])
        self.total = 0.0

    def add(self, pos: int) -> None:
        self.colsum = self.colsum + self.sq[pos]
        self.total += float(self.rowsq[pos])

    def gains(self, targets: np.ndarray) -> np.ndarray:
        if targets.size == 0:
            return np.zeros(0)
        if self.kind is ObjectiveKind.STACKED_NORM:
            return _kernels.stacked_gains(self.rowsq, self.total, targets)
        return _kernels.coupled_gains(self.E, self.colsum, targets)


def marginal_gain(kind, errors: ErrorMatrix, ids: Iterable[int], candidate: int) -> float:
    """``f(A) - f(A + candidate)``; nonpositive for a monotone objective."""
    kind = ObjectiveKind(kind)
    ids = sorted(set(ids))
    if candidate in ids:
        raise ContractViolation(f"candidate {candidate} already selected")
    tr = _GainTracker(kind, errors.E)
    for p in errors.positions(ids):
        tr.add(int(p))
    return float(tr.gains(errors.positions([candidate]))[0])


def greedy_set(kind, errors: ErrorMatrix, q: int, pool: Sequence[int] | None = None):
    """Full-update greedy with lowest-id tie-break. Returns ``(ids, value)``."""
    kind = ObjectiveKind(kind)
    pool_pos = errors.positions(pool) if pool is not None else np.arange(errors.size)
    pool_pos = np.sort(pool_pos)
    tr = _GainTracker(kind, errors.E)
    chosen: list[int] = []
    remaining = pool_pos
    for _ in range(min(q, pool_pos.size)):
        g = tr.gains(remaining)
        k = int(np.argmin(g))  # most negative G = largest increase
        pos = int(remaining[k])
        chosen.append(pos)
        tr.add(pos)
        remaining = np.delete(remaining, k)
    ids = sorted(int(errors.ids[p]) for p in chosen)
    return ids, _value(kind, errors.E, np.array(sorted(chosen), dtype=np.int64))


@dataclass
class OptimalSet:
    ids: list[int]
    value: float
    exact: bool


def optimal_set(kind, errors: ErrorMatrix, q: int,
                pool: Sequence[int] | None = None) -> OptimalSet:
    """Best ``q``-subset of ``pool`` (default: every candidate).

    Exhaustive below ``EXHAUSTIVE_LIMIT`` subsets, top-``q`` for the stacked
    norm (exact by rearrangement), greedy otherwise with ``exact=False``.
    """
    kind = ObjectiveKind(kind)
    pool = sorted(int(j) for j in (pool if pool is not None else errors.ids))
    pos = errors.positions(pool)
    q = min(int(q), len(pool))
    if q <= 0:
        return OptimalSet([], 0.0, True)
    if q == len(pool):
        return OptimalSet(pool, _value(kind, errors.E, pos), True)
    if kind is ObjectiveKind.STACKED_NORM:
        rowsq = np.sum(errors.E[pos] ** 2, axis=1)
        order = np.lexsort((np.arange(len(pool)), -rowsq))[:q]
        best = np.sort(pos[order])
        return OptimalSet(sorted(int(errors.ids[p]) for p in best),
                          _value(kind, errors.E, best), True)
    if math.comb(len(pool), q) <= EXHAUSTIVE_LIMIT:
        rows = errors.E[pos]
        best_c, _ = _kernels.best_coupled_subset(rows * rows, q)
        chosen = np.sort(pos[best_c])
        return OptimalSet([pool[c] for c in best_c], _value(kind, errors.E, chosen), True)
    ids, v = greedy_set(kind, errors, q, pool)
    return OptimalSet(ids, v, False)


# -- scheduler -----------------------------------------------------------------

@dataclass(frozen=True)
class DadsConfig:
    q: int
    stage1: Stage1 = Stage1.RANKING
    method: GainUpdateMethod = GainUpdateMethod.M1_PARTITION_SUBSET
    kind: ObjectiveKind = ObjectiveKind.DIMENSION_COUPLED
    persist_weights: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage1", Stage1(self.stage1))
        object.__setattr__(self, "method", GainUpdateMethod.parse(self.method))
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))


@dataclass
class RoundRecord:
    """Snapshot of one selection round."""

    l: int
    weights: np.ndarray          # all weights after the update, scaled to max 1
    ratios: list[np.ndarray]     # per subset: p over that subset's unselected members
    members: list[np.ndarray]    # per subset: candidate positions matching ``ratios``
    nominees: list[int]          # per subset: nominated position (-1 if exhausted)
    selected: int                # chosen position
    targets: int                 # gains recomputed this round


@dataclass
class SelectionState:
    """Scheduler state for one receiving sensor.

    Weights are held in the log domain (``log_weights``), indexed by
    candidate position (ascending id), and carry over between time steps when
    the config persists them. Cumulative ``exp(-G)`` products span far more
    than the float range, so linear weights are only materialised as a view
    normalised to a maximum of 1.
    """

    ids: np.ndarray
    labels: np.ndarray
    indicators: np.ndarray
    log_weights: np.ndarray
    m: int
    suspects: list[int] = field(default_factory=list)
    subset_suspects: list[list[int]] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    update_count: int = 0
    skipped_subsets: int = 0

    @classmethod
    def initial(cls, partition, indicators: dict[int, np.ndarray]) -> "SelectionState":
        ids = np.array(partition.members(), dtype=np.int64)
        label = partition.label_of()
        labels = np.array([label[int(j)] for j in ids], dtype=np.int64)
        ind = np.array([np.asarray(indicators[int(j)]).astype(np.int64) for j in ids])
        return cls(ids=ids, labels=labels, indicators=ind, log_weights=np.zeros(ids.size),
                   m=partition.m)

    @property
    def weights(self) -> np.ndarray:
        lw = self.log_weights
        return np.exp(lw - lw.max()) if lw.size else lw.copy()

    @weights.setter
    def weights(self, value) -> None:
        w = np.asarray(value, dtype=np.float64)
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ContractViolation("weights must be positive and finite")
        self.log_weights = np.log(w)

    def copy(self) -> "SelectionState":
        return SelectionState(self.ids, self.labels, self.indicators, self.log_weights.copy(),
                              self.m, list(self.suspects),
                              [list(s) for s in self.subset_suspects], list(self.rounds),
                              self.update_count, self.skipped_subsets)

    def ratio_vectors(self, l: int) -> list[np.ndarray]:
        return self.rounds[l - 1].ratios


def gain_update_targets(method, labels: np.ndarray, indicators: np.ndarray,
                        selected_pos: int, unselected: np.ndarray) -> np.ndarray:
    """Positions whose gains are refreshed after ``selected_pos`` was picked."""
    method = GainUpdateMethod.parse(method)
    if method is GainUpdateMethod.M5_FULL:
        return unselected
    if method in (GainUpdateMethod.M1_PARTITION_SUBSET, GainUpdateMethod.M3_RANDOM_SUBSET):
        return unselected[labels[unselected] == labels[selected_pos]]
    related = (indicators[unselected] @ indicators[selected_pos]) > 0
    return unselected[related]


def gain_update_target_ids(method, partition, selected_id: int, sensors) -> set[int]:
    """Id-level wrapper of :func:`gain_update_targets` over a whole neighbor set."""
    by_id = {s.id: s for s in sensors}
    state = SelectionState.initial(partition, {j: by_id[j].indicator for j in partition.members()})
    pos = int(np.searchsorted(state.ids, selected_id))
    if pos >= state.ids.size or state.ids[pos] != selected_id:
        raise ContractViolation(f"{selected_id} is not a candidate")
    unselected = np.array([p for p in range(state.ids.size) if p != pos], dtype=np.int64)
    t = gain_update_targets(method, state.labels, state.indicators, pos, unselected)
    return {int(state.ids[p]) for p in t}


def draw_uniforms(q: int, m: int, rng_stage1: np.random.Generator,
                  rng_stage2: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-step uniforms; drawn up front so paired runs can share them."""
    return rng_stage1.random((q, m)), rng_stage2.random(q)


def _inverse_cdf(p: np.ndarray, u: float) -> int:
    c = np.cumsum(p)
    k = int(np.searchsorted(c, u * c[-1], side="right"))
    return min(k, p.size - 1)


def dads_select(errors: ErrorMatrix, state: SelectionState, cfg: DadsConfig,
                u1: np.ndarray, u2: np.ndarray, force_first_subset: int | None = None,
                max_rounds: int | None = None) -> SelectionState:
    """Run the two-stage scheduler for one time step, mutating ``state``.

    ``u1`` (``q x m``) and ``u2`` (``q``) are the stage-1 and stage-2 uniforms.
    ``force_first_subset`` makes round one keep that subset's nominee.
    ``max_rounds`` stops early (used for paired ratio comparisons).
    """
    if not np.array_equal(errors.ids, state.ids):
        raise ContractViolation("error matrix and selection state disagree on candidates")
    N = state.ids.size
    if cfg.q > N // 2:
        raise AttackConstraintError(f"q={cfg.q} exceeds half of {N} candidates")
    if not cfg.persist_weights:
        state.log_weights = np.zeros(N)
    lw = state.log_weights
    tracker = _GainTracker(cfg.kind, errors.E)
    unselected_mask = np.ones(N, dtype=bool)
    subset_members = [np.flatnonzero(state.labels == g) for g in range(state.m)]
    suspects: list[int] = []
    subset_suspects: list[list[int]] = [[] for _ in range(state.m)]
    rounds: list[RoundRecord] = []
    last = -1
    n_rounds = cfg.q if max_rounds is None else min(cfg.q, max_rounds)
    for l in range(1, n_rounds + 1):
        unselected = np.flatnonzero(unselected_mask)
        if last < 0:
            targets = unselected
        else:
            targets = gain_update_targets(cfg.method, state.labels, state.indicators,
                                          last, unselected)
        if targets.size:
            # w <- w exp(-G), in logs
            lw[targets] = lw[targets] - tracker.gains(targets)
            state.update_count += int(targets.size)
        ratios, members, nominees = [], [], []
        for g in range(state.m):
            mem = subset_members[g][unselected_mask[subset_members[g]]]
            if mem.size == 0:
                state.skipped_subsets += 1
                log.debug("subset %d exhausted at round %d", g, l)
                ratios.append(np.zeros(0))
                members.append(mem)
                nominees.append(-1)
                continue
            lg = lw[mem]
            wg = np.exp(lg - lg.max())
            p = wg / wg.sum()
            if cfg.stage1 is Stage1.RANKING:
                k = int(np.argmax(lg))   # first maximum = lowest id
            else:
                k = _inverse_cdf(p, float(u1[l - 1, g]))
            ratios.append(p)
            members.append(mem)
            nominees.append(int(mem[k]))
        pool = [g for g in range(state.m) if nominees[g] >= 0]
        if l == 1 and force_first_subset is not None and nominees[force_first_subset] >= 0:
            g_s = force_first_subset
        else:
            g_s = pool[min(int(u2[l - 1] * len(pool)), len(pool) - 1)]
        pick = nominees[g_s]
        rounds.append(RoundRecord(l, np.exp(lw - lw.max()), ratios, members, nominees, pick,
                                  int(targets.size)))
        unselected_mask[pick] = False
        tracker.add(pick)
        suspects.append(int(state.ids[pick]))
        subset_suspects[g_s].append(int(state.ids[pick]))
        last = pick
    # shift so the largest log weight is 0; p is unchanged
    state.log_weights = lw - lw.max()
    state.suspects = suspects
    state.subset_suspects = subset_suspects
    state.rounds = rounds
    return state


def ratio_error(state_a: SelectionState, state_b: SelectionState, subset: int,
                l: int = 2) -> np.ndarray:
    """Elementwise ``|p_a - p_b|`` of one subset's distribution at round ``l``."""
    if not np.array_equal(state_a.ids, state_b.ids) or not np.array_equal(state_a.labels, state_b.labels):
        raise ContractViolation("states cover different candidate universes")
    ra, rb = state_a.rounds[l - 1], state_b.rounds[l - 1]
    if not np.array_equal(ra.members[subset], rb.members[subset]):
        raise ContractViolation("subset membership differs between the two states")
    return np.abs(ra.ratios[subset] - rb.ratios[subset])


def windowed_rmse(per_step_sq_mean: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing-window RMSE of per-step mean squared errors."""
    x = np.asarray(per_step_sq_mean, dtype=np.float64)
    out = np.empty_like(x)
    for k in range(x.size):
        out[k] = math.sqrt(x[max(0, k - window + 1):k + 1].mean())
    return out


def ads_config(cfg: DadsConfig) -> DadsConfig:
    """Centralised baseline: one subset, every gain refreshed."""
    return DadsConfig(cfg.q, cfg.stage1, GainUpdateMethod.M5_FULL, cfg.kind, cfg.persist_weights)
