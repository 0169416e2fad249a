"""Tick loop: truth, measurements, tampering, detection and consensus updates.

Each tick follows a barrier discipline: every sensor reads the estimates
published at the end of the previous tick, and the new estimates are
published together. Receivers are processed in ascending id order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..attack import AttackConfig, DynamicAttacker
from ..errors import ContractViolation, DadsError
from ..model import (EstimatorConfig, consensus_update, default_estimator_config,
                     measure, step_state)
from ..partition import PartitionResult
from ..rng import substream
from ..selection import (DadsConfig, ErrorMatrix, GainUpdateMethod, SelectionState,
                         dads_select, ratio_error)
from .scenarios import Scenario


@dataclass
class SelectorSpec:
    """One scheduler attached to every receiver.

    ``partitions`` maps a receiver id to the partition of its in-neighbors.
    Only the driving selector's suspects are removed from the consensus sum;
    the others run as shadows on the same error matrices. A ``paired_method``
    reruns each step from the pre-step weights with that method for two rounds
    and records the per-subset round-2 ratio error.
    """

    name: str
    cfg: DadsConfig
    partitions: dict[int, PartitionResult]
    drives: bool = False
    force_first_subset: int | None = None
    paired_method: GainUpdateMethod | None = None
    record_rounds: int = 0        # keep round records for this many leading steps


@dataclass
class SelectorTrace:
    suspects: list[dict[int, list[int]]] = field(default_factory=list)
    subset_suspects: list[dict[int, list[list[int]]]] = field(default_factory=list)
    rounds: list[dict[int, list]] = field(default_factory=list)
    ratio_sq: list[dict[int, np.ndarray]] = field(default_factory=list)   # per subset mean sq error
    ratio_max: list[dict[int, np.ndarray]] = field(default_factory=list)  # per subset max abs error
    states: dict[int, SelectionState] = field(default_factory=dict)


@dataclass
class RunResult:
    scenario: Scenario
    T: int
    truth: np.ndarray                      # (T+1, n)
    estimates: np.ndarray                  # (T+1, nodes, n), node order = graph.ids
    node_ids: list[int]
    errors: list[dict[int, ErrorMatrix]]   # per step, for recorded receivers
    selectors: dict[str, SelectorTrace]
    attackers: dict[int, DynamicAttacker]

    def error_norms(self) -> np.ndarray:
        """``(T+1, nodes)`` Euclidean estimation-error norms."""
        d = self.estimates - self.truth[:, None, :]
        return np.sqrt(np.sum(d * d, axis=2))


def _with_context(exc: DadsError, k: int, sensor_id: int) -> DadsError:
    exc.args = (f"step {k}, sensor {sensor_id}: {exc}",)
    return exc


def simulate(scenario: Scenario, T: int, seed: int, attack: AttackConfig | None = None,
             selectors: list[SelectorSpec] | None = None,
             estimator: EstimatorConfig | None = None,
             attack_seed: int | None = None, record_receivers=None,
             attack_q: Callable[[int], int] | None = None) -> RunResult:
    """Run ``T`` ticks and return trajectories plus per-selector traces.

    ``attack_q`` overrides ``attack.q`` per receiver (used when ``q`` depends
    on the neighborhood size). ``record_receivers`` limits which receivers
    store error matrices; by default all of them do.
    """
    graph, model = scenario.graph, scenario.model
    A = model.transition
    selectors = selectors or []
    if sum(s.drives for s in selectors) > 1:
        raise ContractViolation("at most one selector may drive the estimator")
    estimator = estimator or default_estimator_config(graph)
    estimator.check(graph)
    ids = graph.ids
    index = {j: r for r, j in enumerate(ids)}
    receivers = sorted(scenario.receivers)
    recorded = set(receivers if record_receivers is None else record_receivers)
    n = model.state_dim
    attack_seed = seed if attack_seed is None else attack_seed

    truth_rng = substream(seed, "truth")
    meas_rng = {j: substream(seed, "meas", j) for j in ids}

    attackers: dict[int, DynamicAttacker] = {}
    if attack is not None:
        for i in receivers:
            cfg_i = attack if attack_q is None else AttackConfig(
                attack_q(i), attack.family, attack.attacked_dims, attack.redraw_each_step,
                attack.noise_bound, attack.sign_mode)
            attackers[i] = DynamicAttacker(i, graph.sensor(i).neighbors_in, cfg_i,
                                           substream(attack_seed, "attack", i))

    nb_rows = {j: np.array([index[k] for k in sorted(graph.sensor(j).neighbors_in)],
                           dtype=np.int64) for j in ids}
    masks = {i: np.array([graph.sensor(k).indicator for k in sorted(graph.sensor(i).neighbors_in)],
                         dtype=np.float64) for i in receivers}

    traces = {s.name: SelectorTrace() for s in selectors}
    states: dict[tuple[str, int], SelectionState] = {}
    st1: dict[tuple[str, int], list[np.random.Generator]] = {}
    st2: dict[tuple[str, int], np.random.Generator] = {}
    for s in selectors:
        for i in receivers:
            part = s.partitions[i]
            ind = {k: graph.sensor(k).indicator for k in part.members()}
            if part.members() != sorted(graph.sensor(i).neighbors_in):
                raise ContractViolation(f"selector {s.name}: partition of {i} does not cover N_i")
            states[s.name, i] = SelectionState.initial(part, ind)
            st1[s.name, i] = [substream(seed, "stage1", s.name, i, g) for g in range(part.m)]
            st2[s.name, i] = substream(seed, "stage2", s.name, i)

    x = model.initial_state.astype(np.float64).copy()
    for j in ids:
        graph.sensor(j).estimate = x.copy()
    truth = np.empty((T + 1, n))
    est = np.empty((T + 1, len(ids), n))
    truth[0] = x
    est[0] = x
    errors_log: list[dict[int, ErrorMatrix]] = []

    for k in range(T):
        X = est[k]
        y = {j: measure(graph.sensor(j), x, meas_rng[j]) for j in ids}
        step_errors: dict[int, ErrorMatrix] = {}
        per_sel = {s.name: ({}, {}, {}, {}, {}) for s in selectors}
        new = np.empty_like(X)
        for j in ids:
            sensor = graph.sensor(j)
            rows = X[nb_rows[j]]
            if j in attackers:
                try:
                    rows = attackers[j].tamper(rows)
                except DadsError as exc:
                    raise _with_context(exc, k, j)
            keep = np.ones(len(rows), dtype=bool)
            if j in masks and selectors:
                nbrs = np.array(sorted(sensor.neighbors_in), dtype=np.int64)
                em = ErrorMatrix(nbrs, masks[j] * (X[index[j]] - rows))
                if j in recorded:
                    step_errors[j] = em
                for s in selectors:
                    state = states[s.name, j]
                    q = s.cfg.q if attack_q is None else attack_q(j)
                    cfg = s.cfg if q == s.cfg.q else DadsConfig(
                        q, s.cfg.stage1, s.cfg.method, s.cfg.kind, s.cfg.persist_weights)
                    u1 = np.column_stack([g.random(cfg.q) for g in st1[s.name, j]])
                    u2 = st2[s.name, j].random(cfg.q)
                    shadow = state.copy() if s.paired_method is not None else None
                    try:
                        dads_select(em, state, cfg, u1, u2, s.force_first_subset)
                    except DadsError as exc:
                        raise _with_context(exc, k, j)
                    sus, sub, rnd, rsq, rmax = per_sel[s.name]
                    if j in recorded:
                        sus[j] = list(state.suspects)
                        sub[j] = [list(g) for g in state.subset_suspects]
                        if k < s.record_rounds:
                            rnd[j] = list(state.rounds)
                    if shadow is not None and cfg.q >= 2:
                        pcfg = DadsConfig(cfg.q, cfg.stage1, s.paired_method, cfg.kind,
                                          cfg.persist_weights)
                        dads_select(em, shadow, pcfg, u1, u2, s.force_first_subset, max_rounds=2)
                        errs = [ratio_error(state, shadow, g, l=2) for g in range(state.m)]
                        rsq[j] = np.array([float(np.mean(e * e)) if e.size else 0.0 for e in errs])
                        rmax[j] = np.array([float(np.max(e)) if e.size else 0.0 for e in errs])
                    if s.drives and estimator.exclude_suspects:
                        keep &= ~np.isin(nbrs, state.suspects)
            new[index[j]] = consensus_update(sensor, A, estimator.consensus_weight,
                                             y[j], rows[keep])
        for s in selectors:
            sus, sub, rnd, rsq, rmax = per_sel[s.name]
            tr = traces[s.name]
            tr.suspects.append(sus)
            tr.subset_suspects.append(sub)
            tr.rounds.append(rnd)
            tr.ratio_sq.append(rsq)
            tr.ratio_max.append(rmax)
        errors_log.append(step_errors)
        for j in ids:
            graph.sensor(j).estimate = new[index[j]].copy()
        est[k + 1] = new
        x = step_state(model, x, truth_rng)
        truth[k + 1] = x

    for s in selectors:
        traces[s.name].states = {i: states[s.name, i] for i in receivers}
    return RunResult(scenario, T, truth, est, list(ids), errors_log, traces, attackers)
