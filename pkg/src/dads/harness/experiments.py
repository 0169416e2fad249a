"""Experiment drivers that turn a ``ScenarioConfig`` into named result tables.

Every table is ``(header, rows)``; :mod:`dads.harness.output` writes them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..attack import AttackConfig, Family, balance_stats
from ..metrics import (error_curve, occupancy_analytic, occupancy_montecarlo,
                       opt_rate_report)
from ..model import EstimatorConfig, agv_model, default_estimator_config
from ..partition import (PartitionResult, Strategy, influence_report, partition_balanced,
                         partition_grassmann, partition_grassmann_improved,
                         partition_min_mutual, partition_random)
from ..rng import substream
from ..selection import DadsConfig, GainUpdateMethod, Stage1, windowed_rmse
from .config import ScenarioConfig
from .scenarios import HUB, Scenario, build_geometric500, build_star100
from .simulate import RunResult, SelectorSpec, simulate

log = logging.getLogger(__name__)

OCC_M_GRID = (2, 4, 5, 10, 20, 30, 40, 50)
OCC_D_GRID = tuple(range(1, 100, 5))


@dataclass
class Bundle:
    tables: dict[str, tuple[list[str], list[tuple]]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def add(self, name: str, header: list[str], rows: list[tuple]) -> None:
        self.tables[name] = (header, rows)


# -- construction -----------------------------------------------------------------

def model_from(cfg: ScenarioConfig):
    m = cfg.model
    return agv_model(m["dt"], m["process_var"], m["process_bound"], m["initial_state"])


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    m = cfg.model
    if cfg.scenario == "star100":
        return build_star100(meas_var=m["meas_var"], meas_bound=m["meas_bound"],
                             model=model_from(cfg))
    g = cfg.geometric
    return build_geometric500(substream(cfg.seed, "topology"), n=int(g["n"]),
                              side=float(g["side"]), radius=float(g["radius"]),
                              meas_var=m["meas_var"], meas_bound=m["meas_bound"],
                              max_retries=int(g["max_retries"]), model=model_from(cfg))


def make_partition(strategy: Strategy, sensors, m_random: int, rng=None) -> PartitionResult:
    ids = [s.id for s in sensors]
    if strategy is Strategy.GRASSMANN:
        return partition_grassmann(sensors)
    if strategy is Strategy.GRASSMANN_IMPROVED:
        return partition_grassmann_improved(sensors)
    if strategy is Strategy.MIN_MUTUAL:
        return partition_min_mutual(sensors)
    if strategy is Strategy.RANDOM:
        return partition_random(ids, min(m_random, len(ids)), rng)
    return partition_balanced(ids, min(m_random, len(ids)))


def receiver_partitions(cfg: ScenarioConfig, scenario: Scenario) -> dict[int, PartitionResult]:
    g = scenario.graph
    return {i: make_partition(cfg.strategy, [g.sensor(j) for j in g.sensor(i).neighbors_in],
                              cfg.m_random, substream(cfg.seed, "partition", i))
            for i in scenario.receivers}


def single_subset(scenario: Scenario) -> dict[int, PartitionResult]:
    g = scenario.graph
    return {i: partition_balanced(g.sensor(i).neighbors_in, 1) for i in scenario.receivers}


def estimator_from(cfg: ScenarioConfig, scenario: Scenario) -> EstimatorConfig:
    if cfg.consensus_weight is None:
        return default_estimator_config(scenario.graph, cfg.exclude_suspects)
    return EstimatorConfig(cfg.consensus_weight, cfg.exclude_suspects)


def attack_from(cfg: ScenarioConfig, family: Family | None = None, q: int | None = None) -> AttackConfig:
    return AttackConfig(q if q is not None else (cfg.attack_q or 0),
                        family or cfg.family, cfg.attack_dims, cfg.redraw,
                        cfg.model["meas_bound"], cfg.sign_mode)


# -- partition tables ---------------------------------------------------------------

def partition_tables(cfg: ScenarioConfig, scenario: Scenario, bundle: Bundle,
                     receiver: int = HUB) -> dict[str, PartitionResult]:
    g = scenario.graph
    sensors = [g.sensor(j) for j in g.sensor(receiver).neighbors_in]
    parts = {}
    for strat in (Strategy.GRASSMANN, Strategy.GRASSMANN_IMPROVED, Strategy.MIN_MUTUAL,
                  Strategy.RANDOM):
        parts[strat.value] = make_partition(strat, sensors, cfg.m_random,
                                            substream(cfg.seed, "partition", receiver))
    prows, irows, crows = [], [], []
    for name, part in parts.items():
        for gi, sub in enumerate(part.subsets):
            prows.extend((name, gi + 1, j) for j in sub)
        rep = influence_report(part, sensors)
        for a in range(part.m):
            crows.append((name, a + 1, float(rep.intra[a])))
            for b in range(part.m):
                if a != b:
                    irows.append((name, a + 1, b + 1, int(rep.inter[a, b])))
    bundle.add("partition.csv", ["strategy", "subset", "member_id"], prows)
    bundle.add("influence.csv", ["strategy", "g", "q", "inter"], irows)
    bundle.add("correlation.csv", ["strategy", "g", "intra"], crows)
    bundle.summary["distance_evals"] = {k: v.distance_evals for k, v in parts.items()}
    return parts


# -- star100 -----------------------------------------------------------------------

def _dads_cfg(cfg: ScenarioConfig, stage1: Stage1, method: GainUpdateMethod, q: int) -> DadsConfig:
    return DadsConfig(q, stage1, method, cfg.objective, cfg.persist_weights)


def star100_cell(cfg: ScenarioConfig, stage1: Stage1, family: Family,
                 record_rounds: int = 0) -> tuple[RunResult, PartitionResult]:
    scenario = build_scenario(cfg)
    parts = receiver_partitions(cfg, scenario)
    q = cfg.q if cfg.q is not None else cfg.attack_q
    sel = [SelectorSpec("dads", _dads_cfg(cfg, stage1, cfg.method, q), parts, drives=True,
                        record_rounds=record_rounds)]
    if cfg.ads_baseline:
        sel.append(SelectorSpec("ads", _dads_cfg(cfg, stage1, GainUpdateMethod.M5_FULL, q),
                                single_subset(scenario)))
    run = simulate(scenario, cfg.T, cfg.seed, attack_from(cfg, family), sel,
                   estimator_from(cfg, scenario), cfg.attack_seed)
    return run, parts[HUB]


def optrate_rows(run: RunResult, part: PartitionResult, cfg: ScenarioConfig,
                 stage1: Stage1, family: Family) -> tuple[list[tuple], dict]:
    errors = [e[HUB] for e in run.errors]
    rows, info = [], {}
    d_sel = [s[HUB] for s in run.selectors["dads"].suspects]
    rep = opt_rate_report("dads", stage1.value, family.value, d_sel, errors, cfg.objective, part)
    for g, r in enumerate(rep.per_subset):
        rows.append(("dads", stage1.value, family.value, f"subset{g + 1}", r.rate))
    rows.append(("dads", stage1.value, family.value, "subset_average", rep.subset_average))
    rows.append(("dads", stage1.value, family.value, "total", rep.overall.rate))
    info["dads"] = {"subset_average": rep.subset_average, "total": rep.overall.rate,
                    "surrogate": rep.overall.surrogate or any(r.surrogate for r in rep.per_subset),
                    "excluded_subset_steps": [r.steps_excluded for r in rep.per_subset],
                    "update_count": run.selectors["dads"].states[HUB].update_count}
    if "ads" in run.selectors:
        a_sel = [s[HUB] for s in run.selectors["ads"].suspects]
        arep = opt_rate_report("ads", stage1.value, family.value, a_sel, errors, cfg.objective, part)
        rows.append(("ads", stage1.value, family.value, "total", arep.overall.rate))
        info["ads"] = {"total": arep.overall.rate, "surrogate": arep.overall.surrogate,
                       "update_count": run.selectors["ads"].states[HUB].update_count}
        info["gap"] = arep.overall.rate - rep.subset_average
    return rows, info


def paired_ratio_run(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-step, per-subset mean squared and max ratio error of the paired run."""
    scenario = build_scenario(cfg)
    parts = receiver_partitions(cfg, scenario)
    q = cfg.q if cfg.q is not None else cfg.attack_q
    spec = SelectorSpec("dads", _dads_cfg(cfg, cfg.stage1, cfg.method, q), parts, drives=True,
                        force_first_subset=cfg.paired.force_first_subset,
                        paired_method=cfg.paired.method)
    run = simulate(scenario, cfg.T, cfg.seed, attack_from(cfg), [spec],
                   estimator_from(cfg, scenario), cfg.attack_seed)
    tr = run.selectors["dads"]
    sq = np.array([r[HUB] for r in tr.ratio_sq])
    mx = np.array([r[HUB] for r in tr.ratio_max])
    return sq, mx


def _trajectory_rows(run: RunResult) -> list[tuple]:
    rows = []
    for k in range(run.T + 1):
        for r, sid in enumerate(run.node_ids):
            for d in range(run.truth.shape[1]):
                rows.append((k, sid, d + 1, float(run.truth[k, d]), float(run.estimates[k, r, d])))
    return rows


def _attack_rows(run: RunResult, receivers) -> list[tuple]:
    rows = []
    for i in receivers:
        trace = run.attackers[i].trace
        for k, sig in enumerate(trace.signals):
            for j in sorted(sig):
                for d in np.flatnonzero(sig[j]):
                    rows.append((k, i, j, int(d) + 1, float(sig[j][d])))
    return rows


def _selection_rows(run: RunResult, name: str, receivers) -> list[tuple]:
    rows = []
    tr = run.selectors[name]
    for k, per in enumerate(tr.rounds):
        for i in receivers:
            if i not in per:
                continue
            state = tr.states[i]
            for rec in per[i]:
                for g in range(len(rec.members)):
                    for pos, p in zip(rec.members[g], rec.ratios[g]):
                        rows.append((k, rec.l, g + 1, int(state.ids[pos]), float(rec.weights[pos]),
                                     float(p), int(pos == rec.selected)))
    return rows


def run_star100(cfg: ScenarioConfig) -> Bundle:
    bundle = Bundle()
    scenario = build_scenario(cfg)
    partition_tables(cfg, scenario, bundle)
    main, part = star100_cell(cfg, cfg.stage1, cfg.family, record_rounds=cfg.selection_steps)
    opt_rows, info = optrate_rows(main, part, cfg, cfg.stage1, cfg.family)
    cells = {f"{cfg.stage1.value}/{cfg.family.value}": info}
    if cfg.all_cells:
        for stage1 in (Stage1.RANKING, Stage1.PROBABILITY):
            for family in (Family.UNSTEALTHY, Family.STEALTHY):
                if (stage1, family) == (cfg.stage1, cfg.family):
                    continue
                log.info("star100 cell %s/%s", stage1.value, family.value)
                run, p = star100_cell(cfg, stage1, family)
                rows, inf = optrate_rows(run, p, cfg, stage1, family)
                opt_rows.extend(rows)
                cells[f"{stage1.value}/{family.value}"] = inf
    bundle.add("optrate.csv", ["algorithm", "stage1", "family", "scope", "rate"], opt_rows)
    bundle.summary["optrate"] = cells

    bundle.add("attacks.csv", ["k", "receiver", "sender", "dim", "z"], _attack_rows(main, [HUB]))
    bundle.add("selection.csv", ["k", "l", "subset", "candidate", "weight", "p", "selected"],
               _selection_rows(main, "dads", [HUB]))
    bal = balance_stats(main.attackers[HUB].trace, part)
    bundle.add("balance.csv", ["subset", "mean_attacked", "intensity_ratio", "undefined"],
               [(g + 1, float(bal.mean_attacked[g]), float(bal.intensity_ratio[g]),
                 int(bal.undefined_ratio)) for g in range(part.m)])
    curve = error_curve(main.error_norms(), "dads")
    bundle.add("rmse.csv", ["k", "case", "value"], [(k, "dads", float(v)) for k, v in enumerate(curve)])
    if cfg.trajectories:
        bundle.add("trajectories.csv", ["k", "sensor_id", "dim", "truth", "estimate"],
                   _trajectory_rows(main))

    if cfg.paired.enabled:
        sq, mx = paired_ratio_run(cfg)
        rows = []
        w = np.column_stack([windowed_rmse(sq[:, g]) for g in range(sq.shape[1])])
        for k in range(sq.shape[0]):
            for g in range(sq.shape[1]):
                rows.append((k, g + 1, float(np.sqrt(sq[k, g])), float(mx[k, g]), float(w[k, g])))
        bundle.add("ratio_error.csv", ["k", "subset", "rmse", "max_abs", "wrmse"], rows)
        bundle.summary["ratio_error_wrmse_mean"] = [float(w[:, g].mean()) for g in range(w.shape[1])]
    bundle.summary["update_count"] = info["dads"]["update_count"]
    return bundle


# -- geometric500 --------------------------------------------------------------------

def geometric_case(cfg: ScenarioConfig, case: str, record_rounds: int = 0) -> RunResult:
    scenario = build_scenario(cfg)
    g = scenario.graph

    def q_of(i: int) -> int:
        half = len(g.sensor(i).neighbors_in) // 2
        return half if cfg.attack_q is None else min(cfg.attack_q, half)

    sel = []
    if case == "dads":
        parts = receiver_partitions(cfg, scenario)
        sel = [SelectorSpec("dads", _dads_cfg(cfg, cfg.stage1, cfg.method, 1), parts, drives=True,
                            record_rounds=record_rounds)]
    attack = attack_from(cfg, q=1) if case != "no_attack" else None
    keep = sorted(scenario.receivers)[:cfg.max_receivers]
    return simulate(scenario, cfg.T, cfg.seed, attack, sel, estimator_from(cfg, scenario),
                    cfg.attack_seed, record_receivers=keep, attack_q=q_of)


def run_geometric(cfg: ScenarioConfig) -> Bundle:
    bundle = Bundle()
    curves, rows = {}, []
    sel_rows, att_rows = [], []
    for case in cfg.cases:
        log.info("geometric500 case %s", case)
        run = geometric_case(cfg, case, record_rounds=cfg.selection_steps)
        curves[case] = error_curve(run.error_norms(), case)
        keep = sorted(run.scenario.receivers)[:cfg.max_receivers]
        if case == "dads":
            sel_rows = _selection_rows(run, "dads", keep)
        if case != "no_attack" and not att_rows:
            att_rows = _attack_rows(run, keep)
    for case in cfg.cases:
        rows.extend((k, case, float(v)) for k, v in enumerate(curves[case]))
    bundle.add("rmse.csv", ["k", "case", "value"], rows)
    bundle.add("attacks.csv", ["k", "receiver", "sender", "dim", "z"], att_rows)
    if sel_rows:
        bundle.add("selection.csv", ["k", "l", "subset", "candidate", "weight", "p", "selected"],
                   sel_rows)
    bundle.summary["rmse_mean"] = {c: float(v.mean()) for c, v in curves.items()}
    if {"no_attack", "dads", "no_detection"} <= curves.keys():
        bundle.summary["ordering"] = ordering_stats(curves)
    return bundle


def ordering_stats(curves: dict[str, np.ndarray]) -> dict:
    """Fraction of steps ``k >= 1`` where no_attack <= dads <= no_detection."""
    a, d, n = (np.asarray(curves[c])[1:] for c in ("no_attack", "dads", "no_detection"))
    return {"weak": float(np.mean((a <= d) & (d <= n))),
            "strict": float(np.mean((a < d) & (d < n))),
            "means": [float(a.mean()), float(d.mean()), float(n.mean())]}


def run_experiment(cfg: ScenarioConfig) -> Bundle:
    if cfg.scenario == "star100":
        return run_star100(cfg)
    return run_geometric(cfg)


# -- occupancy sweep ---------------------------------------------------------------

def sweep_occupancy(seed: int = 1, N: int = 100, draws: int = 10_000,
                    m_grid=OCC_M_GRID, d_grid=OCC_D_GRID) -> Bundle:
    bundle = Bundle()
    rows = []
    for mode in ("analytic", "montecarlo"):
        for m in m_grid:
            for d in d_grid:
                if mode == "analytic":
                    E, frac = occupancy_analytic(N, m, d)
                else:
                    E, frac = occupancy_montecarlo(N, m, d, substream(seed, "occupancy", m, d), draws)
                rows.append((m, d, E, frac, mode))
    bundle.add("occupancy.csv", ["m", "d", "mean", "frac", "mode"], rows)
    return bundle
