import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dads.errors import ContractViolation, DivergedGainError, UnobservableNeighborhoodError
from dads.model import (AGV_SENSOR_TYPES, EstimatorConfig, NetworkGraph, SystemModel,
                        agv_model, agv_transition, compute_gain, default_estimator_config,
                        estimator_step, indicator_vector, jointly_observable, kalman_mask,
                        make_sensor, measure, observability_matrix, riccati_gain,
                        sample_bounded_noise, step_state)
from dads.rng import substream

X0 = np.array([50.0, 0.0, 5.0, 0.0])


def zero_noise_model(A=None):
    A = agv_transition() if A is None else A
    return SystemModel(A, 1e-12 * np.eye(A.shape[0]), 0.0, np.zeros(A.shape[0]))


# -- step_state / measure ----------------------------------------------------------

def test_step_identity_zero_noise():
    m = zero_noise_model(np.eye(4))
    assert np.array_equal(step_state(m, X0, substream(0, "t")), X0)


def test_step_agv_zero_noise():
    # position x advances by v_x * dt = 5 / 50
    out = step_state(zero_noise_model(), X0, substream(0, "t"))
    assert np.allclose(out, [50.1, 0.0, 5.0, 0.0], rtol=0, atol=1e-12)


def test_step_rejects_bad_dimension():
    with pytest.raises(ContractViolation):
        step_state(agv_model(), np.zeros(3), substream(0, "t"))


def test_process_noise_truncated_and_centred():
    rng = substream(7, "noise")
    Q = 0.5 * np.eye(4)
    w = np.array([sample_bounded_noise(rng, Q, 0.05) for _ in range(10_000)])
    assert np.abs(w).max() <= 0.05
    # truncated N(0, 0.5) at 0.05 is close to uniform: sd ~ 0.05 / sqrt(3)
    sd = w.std(axis=0)
    assert np.all(np.abs(w.mean(axis=0)) <= 3 * sd / math.sqrt(len(w)))


def test_correlated_noise_is_truncated_too():
    rng = substream(3, "noise")
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    w = np.array([sample_bounded_noise(rng, cov, 0.8) for _ in range(2000)])
    assert np.abs(w).max() <= 0.8


def test_measure_examples():
    m = zero_noise_model()
    s1 = make_sensor(1, AGV_SENSOR_TYPES[1], m, meas_var=1e-12, meas_bound=0.0, with_gain=False)
    s3 = make_sensor(3, AGV_SENSOR_TYPES[3], m, meas_var=1e-12, meas_bound=0.0, with_gain=False)
    rng = substream(0, "m")
    assert measure(s1, X0, rng)[0] == 50.0
    assert measure(s3, X0, rng)[0] == 5.0


def test_measurement_noise_bound():
    s = make_sensor(1, AGV_SENSOR_TYPES[1], agv_model())
    rng = substream(1, "m")
    nu = np.array([measure(s, X0, rng)[0] - 50.0 for _ in range(5000)])
    assert np.abs(nu).max() <= 0.05 + 1e-12


# -- observability and masking -----------------------------------------------------

@pytest.mark.parametrize("t, expected", [
    (1, [1, 0, 1, 0]), (2, [0, 1, 0, 1]), (3, [0, 0, 1, 0]), (4, [0, 0, 0, 1])])
def test_agv_indicators(t, expected):
    Q = observability_matrix(agv_transition(), AGV_SENSOR_TYPES[t])
    assert indicator_vector(Q).tolist() == expected


def test_observability_identity():
    Q = observability_matrix(np.eye(2), np.array([[1.0, 0.0]]))
    assert np.flatnonzero(np.abs(Q).sum(axis=1)).tolist() == [0]


def test_observability_matches_brute_stack():
    A = agv_transition()
    C = AGV_SENSOR_TYPES[1]
    brute = np.hstack([(C @ np.linalg.matrix_power(A, p)).T for p in range(4)])
    assert np.allclose(observability_matrix(A, C), brute)


def test_rank_equals_indicator_popcount():
    for t in (1, 2, 3, 4):
        s = make_sensor(t, AGV_SENSOR_TYPES[t], agv_model())
        assert s.rank == int(s.indicator.sum())


def test_kalman_mask_examples():
    assert kalman_mask(np.array([1, 0, 1, 0]), [2, 3, 4, 5]).tolist() == [2, 0, 4, 0]
    e = np.array([1.5, -2.0, 0.25, 9.0])
    assert np.array_equal(kalman_mask(np.ones(4, int), e), e)
    assert np.array_equal(kalman_mask(np.zeros(4, int), e), np.zeros(4))


@given(st.lists(st.integers(0, 1), min_size=4, max_size=4),
       st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_kalman_mask_support(ind, err):
    out = kalman_mask(np.array(ind), np.array(err))
    for b, e, o in zip(ind, err, out):
        assert o == (e if b else 0.0)


def test_joint_observability_gate():
    A = agv_transition()
    assert jointly_observable(A, [AGV_SENSOR_TYPES[t] for t in (1, 2, 3, 4)])
    assert not jointly_observable(A, [AGV_SENSOR_TYPES[3], AGV_SENSOR_TYPES[4]])


def test_graph_rejects_unobservable_neighborhood():
    m = agv_model()
    nodes = [make_sensor(i, AGV_SENSOR_TYPES[t], m) for i, t in ((0, 1), (1, 3), (2, 4))]
    nodes[0].neighbors_in = [1, 2]
    with pytest.raises(UnobservableNeighborhoodError):
        NetworkGraph(nodes).validate(m.transition)


# -- gains -------------------------------------------------------------------------

@pytest.mark.parametrize("q, r", [(0.5, 0.5), (0.1, 2.0), (3.0, 0.01)])
def test_scalar_riccati_closed_form(q, r):
    # predictor Riccati with A = C = 1: P^2 = q (P + r)
    P = (q + math.sqrt(q * q + 4 * q * r)) / 2
    K = riccati_gain([[1.0]], [[1.0]], [[q]], [[r]])
    assert K[0, 0] == pytest.approx(P / (P + r), rel=1e-9)
    # and the fixed point of the raw recursion agrees
    Pi = q
    for _ in range(10_000):
        Pi = Pi + q - Pi * Pi / (Pi + r)
    assert Pi == pytest.approx(P, rel=1e-9)


def test_zero_measurement_gain_diverges():
    m = agv_model()
    s = make_sensor(9, np.zeros((1, 4)), m, with_gain=False)
    with pytest.raises(DivergedGainError) as exc:
        compute_gain(m, s)
    assert exc.value.sensor_id == 9


def test_gain_zero_on_unobservable_rows():
    s = make_sensor(1, AGV_SENSOR_TYPES[1], agv_model())
    assert np.all(s.gain[[1, 3]] == 0.0)
    assert np.all(s.gain[[0, 2]] != 0.0)


# -- estimator ---------------------------------------------------------------------

def _pair_graph(offsets=(0.0,)):
    m = agv_model()
    hub = make_sensor(0, AGV_SENSOR_TYPES[0], m)
    nbrs = [make_sensor(i + 1, AGV_SENSOR_TYPES[(i % 4) + 1], m) for i in range(len(offsets))]
    hub.neighbors_in = [s.id for s in nbrs]
    return m, NetworkGraph([hub] + nbrs)


def test_estimator_consensus_vanishes():
    m, g = _pair_graph((0, 0, 0, 0))
    x = g.sensor(0).estimate
    recv = {j: x.copy() for j in (1, 2, 3, 4)}
    y = g.sensor(0).meas_matrix @ x
    out = estimator_step(g, EstimatorConfig(0.1), 0, y, recv, A=m.transition)
    assert np.allclose(out, m.transition @ x)


def test_estimator_zero_gain_zero_lambda():
    m, g = _pair_graph((0, 0))
    hub = g.sensor(0)
    hub.gain = np.zeros_like(hub.gain)
    recv = {1: np.full(4, 123.0), 2: np.full(4, -7.0)}
    out = estimator_step(g, EstimatorConfig(1e-300), 0, [999.0], recv, A=m.transition)
    assert np.allclose(out, m.transition @ hub.estimate)


def test_estimator_single_offset():
    m, g = _pair_graph((0,))
    hub = g.sensor(0)
    hub.gain = np.zeros_like(hub.gain)
    delta = np.array([0.3, -0.1, 0.2, 0.05])
    lam = 0.25
    out = estimator_step(g, EstimatorConfig(lam), 0, [0.0], {1: hub.estimate + delta}, A=m.transition)
    assert np.allclose(out, m.transition @ hub.estimate + lam * m.transition @ delta)


def test_estimator_excludes_suspects():
    m, g = _pair_graph((0, 0))
    hub = g.sensor(0)
    hub.gain = np.zeros_like(hub.gain)
    recv = {1: hub.estimate.copy(), 2: hub.estimate + 10.0}
    out = estimator_step(g, EstimatorConfig(0.2), 0, [0.0], recv, suspects={2}, A=m.transition)
    assert np.allclose(out, m.transition @ hub.estimate)
    keep = estimator_step(g, EstimatorConfig(0.2, exclude_suspects=False), 0, [0.0], recv,
                          suspects={2}, A=m.transition)
    assert not np.allclose(keep, out)


def test_estimator_missing_neighbor():
    m, g = _pair_graph((0, 0))
    with pytest.raises(ContractViolation):
        estimator_step(g, EstimatorConfig(0.2), 0, [0.0], {1: np.zeros(4)}, A=m.transition)


def test_consensus_weight_bounds():
    _, g = _pair_graph((0, 0, 0, 0))
    default_estimator_config(g).check(g)
    with pytest.raises(ContractViolation):
        EstimatorConfig(0.25).check(g)
    with pytest.raises(ContractViolation):
        EstimatorConfig(0.0).check(g)
