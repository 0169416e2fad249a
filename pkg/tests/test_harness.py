import hashlib
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from dads.attack import AttackConfig, Family
from dads.cli import main
from dads.errors import ConfigError, ContractViolation
from dads.harness.config import default_config, dump_default_config, parse_config
from dads.harness.experiments import ordering_stats, run_experiment, sweep_occupancy
from dads.harness.output import read_csv, write_bundle
from dads.harness.scenarios import HUB, build_geometric500, build_star100
from dads.harness.simulate import SelectorSpec, simulate
from dads.model import jointly_observable
from dads.partition import partition_grassmann
from dads.rng import substream
from dads.selection import DadsConfig

X0 = [50.0, 0.0, 5.0, 0.0]


# -- config ------------------------------------------------------------------------------

def test_default_config_roundtrip():
    for sc in ("star100", "geometric500"):
        data = yaml.safe_load(dump_default_config(sc))
        assert data == default_config(sc)
        cfg = parse_config(data)
        assert cfg.scenario == sc


def test_config_conversions():
    cfg = parse_config({})
    assert cfg.attack_dims == (2, 3)
    assert cfg.paired.force_first_subset == 3
    assert cfg.q == 40 and cfg.T == 500
    g = parse_config({"scenario": "geometric500"})
    assert g.T == 100 and g.attack_q is None and g.family is Family.STEALTHY


@pytest.mark.parametrize("bad", [
    {"bogus": 1}, {"selection": {"nope": 1}}, {"T": 0}, {"T": "ten"},
    {"selection": {"method": "m9"}}, {"attack": {"dims": [0]}}, {"scenario": "mars"},
    {"geometric": {"cases": ["sometimes"]}}, {"seed": 2 ** 64}])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


# -- scenarios -----------------------------------------------------------------------------

def test_star100_structure():
    sc = build_star100()
    g = sc.graph
    hub = g.sensor(HUB)
    assert hub.neighbors_in == list(range(1, 101))
    assert hub.meas_matrix.tolist() == [[1.0, 0.0, 0.0, 0.0]]
    types = [g.sensor(j).sensor_type for j in hub.neighbors_in]
    assert types == [1] * 25 + [2] * 25 + [3] * 25 + [4] * 25
    assert jointly_observable(sc.A, [g.sensor(j).meas_matrix for j in hub.neighbors_in])
    assert all(np.array_equal(s.estimate, X0) for s in g.nodes)
    sensors = [g.sensor(j) for j in hub.neighbors_in]
    assert partition_grassmann(sensors).subsets[0] == list(range(1, 26))


@pytest.fixture(scope="module")
def small_geo():
    return build_geometric500(substream(3, "topology"), n=160, side=100.0, radius=30.0)


def test_geometric_balanced_and_local(small_geo):
    g = small_geo.graph
    pos = g.positions
    for s in g.nodes:
        counts = [sum(g.sensor(j).sensor_type == t for j in s.neighbors_in) for t in (1, 2, 3, 4)]
        assert len(set(counts)) == 1 and counts[0] >= 1
        for j in s.neighbors_in:
            assert np.linalg.norm(pos[s.id - 1] - pos[j - 1]) <= 30.0
        assert jointly_observable(small_geo.A, [g.sensor(j).meas_matrix for j in s.neighbors_in])


def test_geometric_retry_limit():
    with pytest.raises(ContractViolation, match="node"):
        build_geometric500(substream(0, "t"), n=20, side=1000.0, radius=5.0, max_retries=3)


# -- simulation ----------------------------------------------------------------------------

def _star_selectors(sc, q=10):
    g = sc.graph
    part = partition_grassmann([g.sensor(j) for j in g.sensor(HUB).neighbors_in])
    return [SelectorSpec("dads", DadsConfig(q), {HUB: part}, drives=True)]


def test_simulation_deterministic():
    runs = []
    for _ in range(2):
        sc = build_star100()
        runs.append(simulate(sc, 15, 5, AttackConfig(10), _star_selectors(sc)))
    a, b = runs
    assert np.array_equal(a.truth, b.truth) and np.array_equal(a.estimates, b.estimates)
    assert a.selectors["dads"].suspects == b.selectors["dads"].suspects


def test_attack_seed_does_not_move_truth():
    sc = build_star100()
    a = simulate(sc, 10, 5, AttackConfig(10), _star_selectors(sc), attack_seed=1)
    sc = build_star100()
    b = simulate(sc, 10, 5, AttackConfig(10), _star_selectors(sc), attack_seed=2)
    assert np.array_equal(a.truth, b.truth)
    assert not np.array_equal(a.estimates, b.estimates)


def test_no_attack_errors_bounded():
    sc = build_star100()
    run = simulate(sc, 500, 2)
    norms = run.error_norms()
    steady = np.sqrt(np.mean(norms[100:] ** 2))
    assert np.all(np.abs(run.estimates - run.truth[:, None, :]).max(axis=2) <= 10 * steady)


def test_error_carries_step_and_sensor():
    sc = build_star100()
    sel = _star_selectors(sc, q=60)
    with pytest.raises(ContractViolation, match=r"step 0, sensor 0"):
        simulate(sc, 3, 1, AttackConfig(10), sel)


def test_ordering_stats():
    c = {"no_attack": np.array([0, 1, 1, 1.0]), "dads": np.array([0, 2, 2, 0.5]),
         "no_detection": np.array([0, 3, 2, 2.0])}
    s = ordering_stats(c)
    assert s["weak"] == pytest.approx(2 / 3) and s["strict"] == pytest.approx(1 / 3)


# -- bundles and CLI -------------------------------------------------------------------------

SMALL = {"T": 6, "selection": {"all_cells": False},
         "output": {"plots": True, "selection_steps": 2}}


def _digest(d: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_bundle_byte_identical(tmp_path):
    for name in ("a", "b"):
        write_bundle(run_experiment(parse_config(SMALL)), tmp_path / name, plots=True)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    names = set(_digest(tmp_path / "a"))
    assert {"partition.csv", "influence.csv", "correlation.csv", "attacks.csv", "selection.csv",
            "optrate.csv", "rmse.csv", "ratio_error.csv", "trajectories.csv", "balance.csv",
            "summary.json", "ratio_error.svg", "rmse.svg"} <= names


def test_bundle_headers(tmp_path):
    write_bundle(run_experiment(parse_config(SMALL)), tmp_path, plots=False)
    expect = {"partition.csv": "strategy,subset,member_id", "influence.csv": "strategy,g,q,inter",
              "correlation.csv": "strategy,g,intra", "attacks.csv": "k,receiver,sender,dim,z",
              "selection.csv": "k,l,subset,candidate,weight,p,selected",
              "optrate.csv": "algorithm,stage1,family,scope,rate", "rmse.csv": "k,case,value",
              "trajectories.csv": "k,sensor_id,dim,truth,estimate"}
    for name, header in expect.items():
        assert (tmp_path / name).read_text().splitlines()[0] == header
    _, rows = read_csv(tmp_path / "ratio_error.csv")
    for r in rows:
        if r["subset"] in ("1", "3", "4"):
            assert float(r["rmse"]) == 0.0


def test_occupancy_sweep_grid():
    b = sweep_occupancy(draws=200)
    _, rows = b.tables["occupancy.csv"]
    for mode in ("analytic", "montecarlo"):
        assert sum(r[4] == mode for r in rows) == 8 * 20


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["--print-default-config"]) == 0
    assert "scenario: star100" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("bogus: 1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    bad.write_text("T: [unclosed\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 2
    viol = tmp_path / "viol.yaml"
    viol.write_text("T: 2\nattack: {q: 60}\nselection: {q: 10, all_cells: false}\n")
    assert main(["simulate", "--config", str(viol), "--out", str(tmp_path / "y")]) == 3
    assert main(["report", "--in", str(tmp_path / "nope")]) == 2


def test_cli_simulate_partition_report(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    assert yaml.safe_load((out / "config.yaml").read_text())["seed"] == 9
    (out / "rmse.svg").unlink()
    assert main(["report", "--in", str(out)]) == 0
    assert (out / "rmse.svg").exists()
    assert main(["partition", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
    text = capsys.readouterr().out
    assert "grassmann: m=4" in text and "3762.5" in text
    assert main(["sweep-occupancy", "--out", str(tmp_path / "occ"), "--draws", "100",
                 "--no-plots"]) == 0
    assert (tmp_path / "occ" / "occupancy.csv").exists()


def test_thread_count_independence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"T": 4, "selection": {"all_cells": False},
                                   "output": {"plots": False}}))
    digests = []
    for threads in ("1", "4"):
        env = {**os.environ, "OMP_NUM_THREADS": threads, "NUMBA_NUM_THREADS": threads,
               "OPENBLAS_NUM_THREADS": threads, "MKL_NUM_THREADS": threads}
        out = tmp_path / f"t{threads}"
        subprocess.run([sys.executable, "-m", "dads.cli", "simulate", "--config", str(cfg),
                        "--out", str(out)], env=env, check=True, capture_output=True)
        digests.append(_digest(out))
    assert digests[0] == digests[1]
