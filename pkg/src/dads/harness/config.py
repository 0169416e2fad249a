"""Scenario configuration: nested YAML, validated into frozen dataclasses.

State dimensions in ``attack.dims`` are 1-based in the file (``[3, 4]`` are
the two velocities) and 0-based everywhere in code.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any

import yaml

from ..attack import Family, SignMode
from ..errors import ConfigError
from ..partition import Strategy
from ..selection import GainUpdateMethod, ObjectiveKind, Stage1

SCENARIOS = ("star100", "geometric500")
CASES = ("no_attack", "dads", "no_detection")

_COMMON = {
    "scenario": "star100",
    "T": 500,
    "seed": 1,
    "model": {
        "dt": 0.02,
        "process_var": 0.5,
        "process_bound": 0.05,
        "meas_var": 0.5,
        "meas_bound": 0.05,
        "initial_state": [50.0, 0.0, 5.0, 0.0],
    },
    "partition": {"strategy": "grassmann", "m_random": 4},
    "selection": {
        "q": 40,
        "stage1": "ranking",
        "method": "m1",
        "objective": "dimension_coupled",
        "persist_weights": True,
        "ads_baseline": True,
        "all_cells": True,
        "paired": {"enabled": True, "method": "m2", "force_first_subset": 4},
    },
    "attack": {
        "q": 40,
        "family": "unstealthy",
        "dims": [3, 4],
        "redraw": True,
        "sign_mode": "independent",
        "seed": None,
    },
    "estimator": {"consensus_weight": None, "exclude_suspects": True},
    "geometric": {"n": 500, "side": 200.0, "radius": 30.0, "max_retries": 200,
                  "cases": list(CASES)},
    "output": {"dir": "out", "plots": True, "trajectories": True,
               "selection_steps": 5, "max_receivers": 5},
}

_GEOMETRIC_OVERRIDES = {
    "scenario": "geometric500",
    "T": 100,
    "selection": {"q": None, "ads_baseline": False, "all_cells": False,
                  "paired": {"enabled": False}},
    "attack": {"q": None, "family": "stealthy"},
    "output": {"trajectories": False},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(scenario: str = "star100") -> dict:
    if scenario == "star100":
        return copy.deepcopy(_COMMON)
    if scenario == "geometric500":
        return _merge(_COMMON, _GEOMETRIC_OVERRIDES)
    raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def dump_default_config(scenario: str = "star100") -> str:
    return yaml.safe_dump(default_config(scenario), sort_keys=False)


@dataclass(frozen=True)
class PairedConfig:
    enabled: bool
    method: GainUpdateMethod
    force_first_subset: int        # 0-based


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    T: int
    seed: int
    model: dict
    strategy: Strategy
    m_random: int
    q: int | None
    stage1: Stage1
    method: GainUpdateMethod
    objective: ObjectiveKind
    persist_weights: bool
    ads_baseline: bool
    all_cells: bool
    paired: PairedConfig
    attack_q: int | None
    family: Family
    attack_dims: tuple[int, ...]  # 0-based
    redraw: bool
    sign_mode: SignMode
    attack_seed: int | None
    consensus_weight: float | None
    exclude_suspects: bool
    geometric: dict
    cases: tuple[str, ...]
    out_dir: str
    plots: bool
    trajectories: bool
    selection_steps: int
    max_receivers: int
    raw: dict


def _get(d: dict, path: str):
    cur: Any = d
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise ConfigError(f"missing key {path!r}")
        cur = cur[part]
    return cur


def _check_keys(user: dict, ref: dict, prefix: str = "") -> None:
    for k, v in user.items():
        key = f"{prefix}{k}"
        if k not in ref:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(v, dict) and isinstance(ref[k], dict):
            _check_keys(v, ref[k], key + ".")


def _enum(cls, value, key):
    try:
        return cls.parse(value) if hasattr(cls, "parse") else cls(value)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{key}: invalid value {value!r}") from exc


def _int(value, key, allow_none=False, minimum=None):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}")
    return value


def parse_config(data: dict | None) -> ScenarioConfig:
    """Validate a nested mapping (e.g. loaded YAML) over the scenario defaults."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    scenario = data.get("scenario", "star100")
    base = default_config(scenario)
    _check_keys(data, base)
    cfg = _merge(base, data)
    T = _int(_get(cfg, "T"), "T", minimum=1)
    seed = _int(_get(cfg, "seed"), "seed", minimum=0)
    if seed >= 2 ** 64:
        raise ConfigError("seed must fit in 64 bits")
    dims = _get(cfg, "attack.dims")
    if not isinstance(dims, list) or not all(isinstance(d, int) and d >= 1 for d in dims):
        raise ConfigError("attack.dims must be a list of 1-based dimension indices")
    cases = tuple(_get(cfg, "geometric.cases"))
    bad = [c for c in cases if c not in CASES]
    if bad:
        raise ConfigError(f"geometric.cases: unknown cases {bad}")
    force = _int(_get(cfg, "selection.paired.force_first_subset"),
                 "selection.paired.force_first_subset", minimum=1)
    lam = _get(cfg, "estimator.consensus_weight")
    if lam is not None and not isinstance(lam, (int, float)):
        raise ConfigError("estimator.consensus_weight must be a number or null")
    model = dict(_get(cfg, "model"))
    if len(model["initial_state"]) != 4:
        raise ConfigError("model.initial_state must have 4 entries")
    return ScenarioConfig(
        scenario=scenario, T=T, seed=seed, model=model,
        strategy=_enum(Strategy, _get(cfg, "partition.strategy"), "partition.strategy"),
        m_random=_int(_get(cfg, "partition.m_random"), "partition.m_random", minimum=1),
        q=_int(_get(cfg, "selection.q"), "selection.q", allow_none=True, minimum=0),
        stage1=_enum(Stage1, _get(cfg, "selection.stage1"), "selection.stage1"),
        method=_enum(GainUpdateMethod, _get(cfg, "selection.method"), "selection.method"),
        objective=_enum(ObjectiveKind, _get(cfg, "selection.objective"), "selection.objective"),
        persist_weights=bool(_get(cfg, "selection.persist_weights")),
        ads_baseline=bool(_get(cfg, "selection.ads_baseline")),
        all_cells=bool(_get(cfg, "selection.all_cells")),
        paired=PairedConfig(bool(_get(cfg, "selection.paired.enabled")),
                            _enum(GainUpdateMethod, _get(cfg, "selection.paired.method"),
                                  "selection.paired.method"),
                            force - 1),
        attack_q=_int(_get(cfg, "attack.q"), "attack.q", allow_none=True, minimum=0),
        family=_enum(Family, _get(cfg, "attack.family"), "attack.family"),
        attack_dims=tuple(d - 1 for d in dims),
        redraw=bool(_get(cfg, "attack.redraw")),
        sign_mode=_enum(SignMode, _get(cfg, "attack.sign_mode"), "attack.sign_mode"),
        attack_seed=_int(_get(cfg, "attack.seed"), "attack.seed", allow_none=True, minimum=0),
        consensus_weight=None if lam is None else float(lam),
        exclude_suspects=bool(_get(cfg, "estimator.exclude_suspects")),
        geometric=dict(_get(cfg, "geometric")),
        cases=cases,
        out_dir=str(_get(cfg, "output.dir")),
        plots=bool(_get(cfg, "output.plots")),
        trajectories=bool(_get(cfg, "output.trajectories")),
        selection_steps=_int(_get(cfg, "output.selection_steps"), "output.selection_steps", minimum=0),
        max_receivers=_int(_get(cfg, "output.max_receivers"), "output.max_receivers", minimum=0),
        raw=cfg,
    )


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parse_config(data)
