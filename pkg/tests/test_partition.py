import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dads.errors import InfeasiblePartitionError, UndefinedSubspaceError
from dads.harness.scenarios import HUB, build_star100
from dads.model import SensorNode
from dads.partition import (Strategy, balanced_cardinality, exact_reduction, grassmann_distance,
                            influence_report, mutual_influence, pairwise_distances,
                            partition_balanced, partition_grassmann,
                            partition_grassmann_improved, partition_min_mutual,
                            partition_random, reduction_formula)
from dads.rng import substream


def fake_sensor(sid, bits):
    bits = np.asarray(bits, dtype=np.int64)
    # diagonal obs matrix: nonzero rows match the indicator, rank = popcount
    obs = np.diag(bits.astype(float))
    return SensorNode(sid, np.zeros((1, bits.size)), np.eye(1), 0.0, obs, bits,
                      np.zeros(bits.size))


@pytest.fixture(scope="module")
def star_sensors():
    sc = build_star100()
    g = sc.graph
    return [g.sensor(j) for j in g.sensor(HUB).neighbors_in]


def brute_angle(a, b):
    # independent route: principal angle between two 1-D subspaces via unit vectors
    u = np.asarray(a, float) / np.linalg.norm(a)
    v = np.asarray(b, float) / np.linalg.norm(b)
    return math.acos(np.clip(abs(u @ v), 0.0, 1.0))


# -- primitives --------------------------------------------------------------------

def test_mutual_influence_examples():
    assert mutual_influence([1, 0, 1, 0], [0, 0, 1, 0]) == 1
    assert mutual_influence([1, 0, 1, 0], [0, 1, 0, 1]) == 0
    assert mutual_influence([1, 0, 1, 0], [1, 0, 1, 0]) == 2


def test_grassmann_examples():
    assert grassmann_distance([1, 0, 1, 0], [1, 0, 1, 0]) == 0.0
    assert grassmann_distance([1, 0, 0, 0], [0, 1, 0, 0]) == pytest.approx(math.pi / 2)
    assert grassmann_distance([1, 0, 1, 0], [0, 0, 1, 0]) == pytest.approx(math.pi / 4)


def test_grassmann_zero_vector():
    with pytest.raises(UndefinedSubspaceError):
        grassmann_distance([0, 0, 0, 0], [1, 0, 0, 0])


bitvec = st.lists(st.integers(0, 1), min_size=5, max_size=5).filter(any)


@given(bitvec, bitvec)
def test_grassmann_properties(a, b):
    d = grassmann_distance(a, b)
    assert 0.0 <= d <= math.pi / 2
    assert d == grassmann_distance(b, a)
    assert (d == 0.0) == (a == b)
    assert d == pytest.approx(brute_angle(a, b), abs=1e-7)


@pytest.mark.parametrize("count, m, sizes", [
    (100, 4, [25, 25, 25, 25]), (10, 3, [4, 3, 3]), (7, 7, [1] * 7)])
def test_balanced_cardinality_examples(count, m, sizes):
    assert balanced_cardinality(count, m) == sizes


@given(st.integers(1, 300), st.integers(1, 300))
def test_balanced_cardinality_properties(count, m):
    if m > count:
        with pytest.raises(InfeasiblePartitionError):
            balanced_cardinality(count, m)
        return
    s = balanced_cardinality(count, m)
    assert sum(s) == count and len(s) == m
    assert max(s) - min(s) <= 1 and s == sorted(s, reverse=True)


# -- strategies on the star ----------------------------------------------------------

def test_star_grassmann_subsets(star_sensors):
    p = partition_grassmann(star_sensors)
    assert p.subsets == [list(range(1, 26)), list(range(26, 51)),
                         list(range(51, 76)), list(range(76, 101))]
    assert p.distance_evals == 4950


def test_star_improved_same_with_fewer_evals(star_sensors):
    p, q = partition_grassmann(star_sensors), partition_grassmann_improved(star_sensors)
    assert p.canonical() == q.canonical()
    # rank groups {C1, C2} (rank 2) and {C3, C4} (rank 1), 50 sensors each
    assert q.distance_evals == 2 * math.comb(50, 2) < p.distance_evals


def test_star_min_mutual(star_sensors):
    p = partition_min_mutual(star_sensors)
    assert p.canonical() == frozenset({frozenset(list(range(1, 26)) + list(range(51, 76))),
                                       frozenset(list(range(26, 51)) + list(range(76, 101)))})


def test_star100_influence_grassmann(star_sensors):
    rep = influence_report(partition_grassmann(star_sensors), star_sensors)
    expected = np.zeros((4, 4))
    for a, b in ((0, 2), (2, 0), (1, 3), (3, 1)):
        expected[a, b] = 625
    off = ~np.eye(4, dtype=bool)
    assert np.array_equal(rep.inter[off], expected[off])
    assert np.all(rep.intra == 1.0)


def test_star100_influence_min_mutual(star_sensors):
    rep = influence_report(partition_min_mutual(star_sensors), star_sensors)
    assert rep.inter[0, 1] == 0 and rep.inter[1, 0] == 0
    assert np.all(rep.intra == 0.5)


def test_influence_brute_force(star_sensors):
    p = partition_random([s.id for s in star_sensors], 4, substream(5, "p"))
    rep = influence_report(p, star_sensors)
    ind = {s.id: tuple(int(b) for b in s.indicator) for s in star_sensors}
    for g, q in itertools.permutations(range(4), 2):
        n = sum(1 for a in p.subsets[g] for b in p.subsets[q]
                if ind[a] != ind[b] and any(x & y for x, y in zip(ind[a], ind[b])))
        assert rep.inter[g, q] == n
    for g, sub in enumerate(p.subsets):
        same = sum(1 for a in sub for b in sub if ind[a] == ind[b])
        assert rep.intra[g] == same / len(sub) ** 2
    assert np.allclose(rep.inter, rep.inter.T, equal_nan=True)


def test_random_partition_examples():
    ids = list(range(1, 101))
    p = partition_random(ids, 4, substream(1, "r"))
    assert [len(s) for s in p.subsets] == [25] * 4 and p.is_partition_of(ids)
    assert partition_random(ids, 1, substream(1, "r")).subsets == [ids]
    q = partition_random(ids, 4, substream(2, "r"))
    assert p.canonical() != q.canonical()
    assert p.canonical() == partition_random(ids, 4, substream(1, "r")).canonical()


def test_balanced_partition_contiguous():
    assert partition_balanced(range(10), 3).subsets == [[0, 1, 2, 3], [4, 5, 6], [7, 8, 9]]


def test_trivial_populations():
    same = [fake_sensor(i, [1, 1, 0, 0]) for i in range(6)]
    assert partition_grassmann(same).m == 1
    assert partition_min_mutual(same).m == 1
    ortho = [fake_sensor(i, np.eye(4, dtype=int)[i]) for i in range(4)]
    assert partition_grassmann(ortho).m == 4
    assert partition_min_mutual(ortho).m == 4
    distinct_ranks = [fake_sensor(i, b) for i, b in
                      enumerate([[1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1]])]
    assert partition_grassmann_improved(distinct_ranks).distance_evals == 0


def test_reduction_formulas():
    assert reduction_formula(100, 4) == 3762.5
    assert exact_reduction(100, 4) == 3750.0
    # exact count: C(100,2) minus four within-group scans of 25
    assert exact_reduction(100, 4) == math.comb(100, 2) - 4 * math.comb(25, 2)


# -- fuzzed invariants ---------------------------------------------------------------

population = st.lists(st.lists(st.integers(0, 1), min_size=4, max_size=4).filter(any),
                      min_size=1, max_size=30)


@given(population)
def test_strategies_are_set_partitions(pop):
    sensors = [fake_sensor(i + 1, b) for i, b in enumerate(pop)]
    ids = [s.id for s in sensors]
    for fn in (partition_grassmann, partition_grassmann_improved, partition_min_mutual):
        assert fn(sensors).is_partition_of(ids)


@given(population)
def test_grassmann_invariants(pop):
    sensors = [fake_sensor(i + 1, b) for i, b in enumerate(pop)]
    by_id = {s.id: s for s in sensors}
    p = partition_grassmann(sensors)
    q = partition_grassmann_improved(sensors)
    assert p.canonical() == q.canonical()
    n = len(sensors)
    assert p.distance_evals == math.comb(n, 2)
    assert q.distance_evals <= p.distance_evals
    label = p.label_of()
    for a, b in itertools.combinations(sensors, 2):
        d = grassmann_distance(a.indicator, b.indicator)
        assert (d == 0.0) == (label[a.id] == label[b.id])
    for sub in p.subsets:
        assert len({by_id[j].rank for j in sub}) == 1


@given(population)
def test_min_mutual_zero_inter(pop):
    sensors = [fake_sensor(i + 1, b) for i, b in enumerate(pop)]
    p = partition_min_mutual(sensors)
    rep = influence_report(p, sensors)
    off = ~np.eye(p.m, dtype=bool)
    assert np.all(rep.inter[off] == 0)
    assert np.all((rep.intra >= 1 / np.array([len(s) for s in p.subsets]) - 1e-15) & (rep.intra <= 1))


def test_pairwise_distance_matrix(star_sensors):
    D = pairwise_distances(star_sensors[:8])
    assert D.shape == (8, 8) and np.allclose(D, D.T) and np.all(np.diag(D) == 0)
