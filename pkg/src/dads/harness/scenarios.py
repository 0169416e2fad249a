"""Scenario construction: the 100-neighbor star and the 500-node geometric network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from ..model import (AGV_SENSOR_TYPES, NetworkGraph, SystemModel, agv_model,
                     make_sensor)
from ..partition import (PartitionResult, partition_grassmann,
                         partition_grassmann_improved, partition_min_mutual,
                         partition_random)

HUB = 0
TYPES = (1, 2, 3, 4)


@dataclass
class Scenario:
    model: SystemModel
    graph: NetworkGraph
    receivers: list[int]          # nodes that run detection and are attacked

    @property
    def A(self) -> np.ndarray:
        return self.model.transition


def _sensor(sid, t, model, meas_var, meas_bound):
    return make_sensor(sid, AGV_SENSOR_TYPES[t], model, meas_var, meas_bound, sensor_type=t)


def build_star100(per_type: int = 25, meas_var: float = 0.5, meas_bound: float = 0.05,
                  model: SystemModel | None = None) -> Scenario:
    """Hub sensor 0 (``C0``) with ``4 * per_type`` neighbors, ids grouped by type.

    Leaves also listen to the hub, to one leaf of every other type and to the
    next leaf of their own type, so each leaf tracks the full state. Only the
    hub's in-links are attacked.
    """
    model = model or agv_model()
    hub = _sensor(HUB, 0, model, meas_var, meas_bound)
    leaves = []
    for t in TYPES:
        for r in range(per_type):
            leaves.append(_sensor((t - 1) * per_type + r + 1, t, model, meas_var, meas_bound))
    hub.neighbors_in = [s.id for s in leaves]

    def leaf_id(t, r):
        return (t - 1) * per_type + (r % per_type) + 1

    if per_type > 1:
        for s in leaves:
            t = s.sensor_type
            r = (s.id - 1) % per_type
            peers = {HUB, leaf_id(t, r + 1)}
            peers |= {leaf_id(u, r) for u in TYPES if u != t}
            s.neighbors_in = sorted(peers)
    graph = NetworkGraph([hub] + leaves)
    graph.validate(model.transition)
    return Scenario(model, graph, [HUB])


def star100_partitions(scenario: Scenario, rng: np.random.Generator | None = None,
                       m_random: int = 4) -> dict[str, PartitionResult]:
    hub = scenario.graph.sensor(HUB)
    sensors = [scenario.graph.sensor(j) for j in hub.neighbors_in]
    out = {
        "grassmann": partition_grassmann(sensors),
        "grassmann_improved": partition_grassmann_improved(sensors),
        "min_mutual": partition_min_mutual(sensors),
    }
    if rng is not None:
        out["random"] = partition_random([s.id for s in sensors], m_random, rng)
    return out


def _rebalance(types: np.ndarray, dist: np.ndarray, adj: np.ndarray):
    """Equal per-type in-neighborhoods, nearest first. Returns lists or a failing node."""
    n = types.size
    neigh = []
    for i in range(n):
        cand = np.flatnonzero(adj[i])
        by_type = {t: cand[types[cand] == t] for t in TYPES}
        t_i = min(v.size for v in by_type.values())
        if t_i < 1:
            return None, i
        keep = []
        for t in TYPES:
            c = by_type[t]
            order = np.lexsort((c, dist[i, c]))
            keep.extend(int(j) for j in c[order[:t_i]])
        neigh.append(sorted(keep))
    return neigh, -1


def build_geometric500(rng: np.random.Generator, n: int = 500, side: float = 200.0,
                       radius: float = 30.0, meas_var: float = 0.5, meas_bound: float = 0.05,
                       max_retries: int = 200, model: SystemModel | None = None) -> Scenario:
    """Random geometric network whose directed in-neighborhoods are type balanced.

    Positions and types are redrawn until every node reaches all four sensor
    types inside ``radius``.
    """
    model = model or agv_model()
    last_bad = None
    for _ in range(max_retries):
        pos = rng.uniform(0.0, side, size=(n, 2))
        types = rng.integers(1, 5, size=n)
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        adj = (dist <= radius) & ~np.eye(n, dtype=bool)
        neigh, bad = _rebalance(types, dist, adj)
        if neigh is not None:
            break
        last_bad = bad
    else:
        raise ContractViolation(
            f"node {last_bad + 1} cannot reach all four sensor types after {max_retries} layouts")
    nodes = []
    for i in range(n):
        s = _sensor(i + 1, int(types[i]), model, meas_var, meas_bound)
        s.neighbors_in = [j + 1 for j in neigh[i]]
        nodes.append(s)
    graph = NetworkGraph(nodes, positions=pos)
    graph.validate(model.transition)
    return Scenario(model, graph, [s.id for s in nodes])
