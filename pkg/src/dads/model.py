"""Plant, sensors, network topology and the consensus estimator.

The plant is a discrete-time LTI system ``x(k+1) = A x(k) + w(k)`` observed by
sensors ``y_i = C_i x + v_i``. Noise is Gaussian but clamped in the infinity
norm by rejection, so both the nominal covariance (used to design gains) and the
hard bound hold literally.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractViolation, DivergedGainError, UnobservableNeighborhoodError

ZERO_TOL = 1e-12
RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 10_000
_MAX_REJECTION_ROUNDS = 10_000


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be a matrix, got ndim={arr.ndim}")
    return arr


def _check_cov(cov: np.ndarray, name: str) -> None:
    if cov.shape[0] != cov.shape[1]:
        raise ContractViolation(f"{name} must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ContractViolation(f"{name} must be symmetric")
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ContractViolation(f"{name} must be positive definite")


@dataclass(frozen=True)
class SystemModel:
    transition: np.ndarray
    process_cov: np.ndarray
    process_bound: float
    initial_state: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.transition, "transition")
        Q = _as_matrix(self.process_cov, "process_cov")
        x0 = np.asarray(self.initial_state, dtype=np.float64).ravel()
        n = A.shape[0]
        if A.shape != (n, n) or Q.shape != (n, n) or x0.shape != (n,):
            raise ContractViolation(
                f"inconsistent shapes A={A.shape} Q={Q.shape} x0={x0.shape}")
        _check_cov(Q, "process_cov")
        if not self.process_bound >= 0:
            raise ContractViolation("process_bound must be >= 0")
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "process_cov", Q)
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "process_bound", float(self.process_bound))

    @property
    def state_dim(self) -> int:
        return self.transition.shape[0]


def agv_transition(dt: float = 1.0 / 50.0) -> np.ndarray:
    """Planar constant-velocity model on ``[p_x, p_y, v_x, v_y]``."""
    A = np.eye(4)
    A[0, 2] = dt
    A[1, 3] = dt
    return A


def agv_model(dt: float = 1.0 / 50.0, process_var: float = 0.5,
              process_bound: float = 0.05,
              initial_state=(50.0, 0.0, 5.0, 0.0)) -> SystemModel:
    return SystemModel(agv_transition(dt), process_var * np.eye(4),
                       process_bound, np.asarray(initial_state, dtype=np.float64))


# measurement matrices of the four AGV sensor types plus the hub sensor
AGV_SENSOR_TYPES = {
    0: np.array([[1.0, 0.0, 0.0, 0.0]]),
    1: np.array([[1.0, 0.0, 0.0, 0.0]]),
    2: np.array([[0.0, 1.0, 0.0, 0.0]]),
    3: np.array([[0.0, 0.0, 1.0, 0.0]]),
    4: np.array([[0.0, 0.0, 0.0, 1.0]]),
}


def sample_bounded_noise(rng: np.random.Generator, cov: np.ndarray,
                         bound: float) -> np.ndarray:
    """Draw ``N(0, cov)`` conditioned on ``||w||_inf <= bound``.

    Diagonal covariances factor into independent scalar truncations, which is
    the same distribution as whole-vector rejection but far cheaper when the
    bound is tight. Correlated covariances fall back to vector rejection.
    """
    cov = np.asarray(cov, dtype=np.float64)
    n = cov.shape[0]
    if np.isinf(bound):
        return rng.multivariate_normal(np.zeros(n), cov)
    if bound == 0:
        return np.zeros(n)
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        sd = np.sqrt(np.diag(cov))
        out = np.empty(n)
        for d in range(n):
            # batch size tuned to the acceptance probability of this component
            p_acc = max(min(2 * bound / (sd[d] * np.sqrt(2 * np.pi)), 1.0), 1e-3)
            batch = int(np.ceil(4.0 / p_acc)) + 4
            for _ in range(_MAX_REJECTION_ROUNDS):
                draws = rng.normal(0.0, sd[d], size=batch)
                ok = np.flatnonzero(np.abs(draws) <= bound)
                if ok.size:
                    out[d] = draws[ok[0]]
                    break
            else:
                raise ContractViolation("noise truncation rejected every draw")
        return out
    L = np.linalg.cholesky(cov)
    for _ in range(_MAX_REJECTION_ROUNDS):
        draws = rng.standard_normal((256, n)) @ L.T
        ok = np.flatnonzero(np.abs(draws).max(axis=1) <= bound)
        if ok.size:
            return draws[ok[0]]
    raise ContractViolation("noise truncation rejected every draw")


def step_state(model: SystemModel, state, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(state, dtype=np.float64)
    if x.shape != (model.state_dim,):
        raise ContractViolation(f"state has shape {x.shape}, expected ({model.state_dim},)")
    return model.transition @ x + sample_bounded_noise(rng, model.process_cov,
                                                        model.process_bound)


def observability_matrix(A, C) -> np.ndarray:
    """Transposed stacked observability matrix ``[C' (CA)' ... (CA^{n-1})']``.

    Row ``l`` is nonzero exactly when state dimension ``l`` enters the sensor's
    output sequence.
    """
    A = _as_matrix(A, "A")
    C = _as_matrix(C, "C")
    n = A.shape[0]
    if C.shape[1] != n:
        raise ContractViolation(f"C has {C.shape[1]} columns, A is {n}x{n}")
    blocks = []
    CAk = C.copy()
    for _ in range(n):
        blocks.append(CAk.T)
        CAk = CAk @ A
    return np.hstack(blocks)


def indicator_vector(obs_matrix) -> np.ndarray:
    """Bit vector of nonzero rows of an observability matrix."""
    obs = np.asarray(obs_matrix, dtype=np.float64)
    scale = max(1.0, float(np.abs(obs).max(initial=0.0)))
    return (np.abs(obs) > ZERO_TOL * scale).any(axis=1).astype(np.uint8)


def observable_rank(obs_matrix) -> int:
    obs = np.asarray(obs_matrix, dtype=np.float64)
    if not obs.size or not np.any(obs):
        return 0
    return int(np.linalg.matrix_rank(obs))


def jointly_observable(A, Cs: Sequence[np.ndarray]) -> bool:
    if not len(Cs):
        return False
    stacked = np.vstack([_as_matrix(C, "C") for C in Cs])
    n = np.asarray(A).shape[0]
    return observable_rank(observability_matrix(A, stacked)) == n


@dataclass
class SensorNode:
    """One sensor: measurement model, observable structure and estimator state."""

    id: int
    meas_matrix: np.ndarray
    meas_cov: np.ndarray
    meas_bound: float
    obs_matrix: np.ndarray
    indicator: np.ndarray
    estimate: np.ndarray
    gain: np.ndarray | None = None
    neighbors_in: list[int] = field(default_factory=list)
    sensor_type: int | None = None

    @property
    def rank(self) -> int:
        return observable_rank(self.obs_matrix)

    @property
    def meas_dim(self) -> int:
        return self.meas_matrix.shape[0]


def make_sensor(sensor_id: int, C, model: SystemModel, meas_var: float = 0.5,
                meas_bound: float = 0.05, sensor_type: int | None = None,
                with_gain: bool = True) -> SensorNode:
    C = _as_matrix(C, "C")
    if C.shape[1] != model.state_dim:
        raise ContractViolation(
            f"sensor {sensor_id}: C has {C.shape[1]} columns, state is {model.state_dim}")
    R = meas_var * np.eye(C.shape[0])
    obs = observability_matrix(model.transition, C)
    node = SensorNode(
        id=int(sensor_id), meas_matrix=C, meas_cov=R, meas_bound=float(meas_bound),
        obs_matrix=obs, indicator=indicator_vector(obs),
        estimate=model.initial_state.copy(), sensor_type=sensor_type,
    )
    if with_gain:
        node.gain = compute_gain(model, node)
    return node


def measure(sensor: SensorNode, state, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(state, dtype=np.float64)
    if x.shape != (sensor.meas_matrix.shape[1],):
        raise ContractViolation(
            f"state has shape {x.shape}, sensor {sensor.id} expects ({sensor.meas_matrix.shape[1]},)")
    return sensor.meas_matrix @ x + sample_bounded_noise(rng, sensor.meas_cov,
                                                         sensor.meas_bound)


def kalman_mask(sensor_or_indicator, error) -> np.ndarray:
    """Keep only the error components inside the sensor's observable support."""
    ind = getattr(sensor_or_indicator, "indicator", sensor_or_indicator)
    ind = np.asarray(ind)
    e = np.asarray(error, dtype=np.float64)
    if e.shape != ind.shape:
        raise ContractViolation(f"error shape {e.shape} != indicator shape {ind.shape}")
    return np.where(ind.astype(bool), e, 0.0)


def riccati_gain(A, C, Q, R, sensor_id=None) -> np.ndarray:
    """Steady-state one-step-predictor gain ``A P C' (C P C' + R)^-1``.

    Results are memoised on the exact input bytes, since large networks
    repeat a handful of sensor types.
    """
    mats = [np.ascontiguousarray(M, dtype=np.float64) for M in (A, C, Q, R)]
    key = tuple((M.shape, M.tobytes()) for M in mats)
    try:
        return _riccati_cached(key).copy()
    except _NoConvergence as exc:
        raise DivergedGainError(sensor_id, str(exc)) from None


class _NoConvergence(Exception):
    pass


@lru_cache(maxsize=256)
def _riccati_cached(key) -> np.ndarray:
    A, C, Q, R = (np.frombuffer(b, dtype=np.float64).reshape(shape) for shape, b in key)
    P = Q.copy()
    for _ in range(RICCATI_MAX_ITER):
        S = C @ P @ C.T + R
        K = A @ P @ C.T @ np.linalg.inv(S)
        P_next = A @ P @ A.T + Q - K @ S @ K.T
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise _NoConvergence("non-finite covariance")
        if np.abs(P_next - P).max() < RICCATI_TOL:
            P = P_next
            break
        P = P_next
    else:
        raise _NoConvergence(f"no convergence in {RICCATI_MAX_ITER} iterations")
    S = C @ P @ C.T + R
    return A @ P @ C.T @ np.linalg.inv(S)


def compute_gain(model: SystemModel, sensor: SensorNode) -> np.ndarray:
    """Constant Kalman gain of the sensor's observable subsystem, zero elsewhere."""
    support = np.flatnonzero(sensor.indicator)
    if support.size == 0:
        raise DivergedGainError(sensor.id, "sensor observes no state dimension")
    A_o = model.transition[np.ix_(support, support)]
    C_o = sensor.meas_matrix[:, support]
    Q_o = model.process_cov[np.ix_(support, support)]
    K_o = riccati_gain(A_o, C_o, Q_o, sensor.meas_cov, sensor.id)
    K = np.zeros((model.state_dim, sensor.meas_dim))
    K[support, :] = K_o
    return K


@dataclass
class NetworkGraph:
    nodes: list[SensorNode]
    positions: np.ndarray | None = None

    def __post_init__(self):
        self._index = {s.id: k for k, s in enumerate(self.nodes)}
        if len(self._index) != len(self.nodes):
            raise ContractViolation("duplicate sensor ids")

    def sensor(self, sensor_id: int) -> SensorNode:
        return self.nodes[self._index[sensor_id]]

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.nodes]

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges ``(sender, receiver)``."""
        return [(j, s.id) for s in self.nodes for j in s.neighbors_in]

    def max_in_degree(self) -> int:
        return max((len(s.neighbors_in) for s in self.nodes), default=0)

    def validate(self, A) -> None:
        """Every receiving node must jointly observe the state through its in-neighbors.

        Pure transmitters (empty in-neighborhood) are exempt.
        """
        for s in self.nodes:
            if not s.neighbors_in:
                continue
            for j in s.neighbors_in:
                if j not in self._index:
                    raise ContractViolation(f"sensor {s.id}: unknown neighbor {j}")
            Cs = [self.sensor(j).meas_matrix for j in s.neighbors_in]
            if not jointly_observable(A, Cs):
                raise UnobservableNeighborhoodError(
                    f"sensor {s.id}: in-neighborhood is not jointly observable")


@dataclass(frozen=True)
class EstimatorConfig:
    consensus_weight: float
    exclude_suspects: bool = True

    def check(self, graph: NetworkGraph) -> None:
        dmax = graph.max_in_degree()
        upper = 1.0 / dmax if dmax else np.inf
        if not 0 < self.consensus_weight < upper:
            raise ContractViolation(
                f"consensus weight {self.consensus_weight} outside (0, {upper})")


def default_estimator_config(graph: NetworkGraph, exclude_suspects: bool = True) -> EstimatorConfig:
    dmax = max(graph.max_in_degree(), 1)
    return EstimatorConfig(0.5 / dmax, exclude_suspects)


def estimator_step(graph: NetworkGraph, cfg: EstimatorConfig, sensor_id: int,
                   measurement, received: Mapping[int, np.ndarray],
                   suspects=(), A=None) -> np.ndarray:
    """One consensus Kalman update for ``sensor_id``.

    ``received`` maps every in-neighbor to the (possibly tampered) estimate it
    delivered. Suspects are dropped from the consensus sum when the config asks
    for exclusion.
    """
    s = graph.sensor(sensor_id)
    if A is None:
        raise ContractViolation("transition matrix A is required")
    A = np.asarray(A, dtype=np.float64)
    missing = [j for j in s.neighbors_in if j not in received]
    if missing:
        raise ContractViolation(f"sensor {sensor_id}: missing estimates from {missing}")
    suspects = set(suspects)
    if not suspects <= set(s.neighbors_in):
        raise ContractViolation(f"sensor {sensor_id}: suspects outside neighborhood")
    used = [j for j in s.neighbors_in if not (cfg.exclude_suspects and j in suspects)]
    rows = np.array([np.asarray(received[j], dtype=np.float64) for j in used])
    return consensus_update(s, A, cfg.consensus_weight, measurement, rows)


def consensus_update(sensor: SensorNode, A: np.ndarray, consensus_weight: float,
                     measurement, rows: np.ndarray) -> np.ndarray:
    """Kalman-consensus update against the already filtered ``rows`` of estimates."""
    x = sensor.estimate
    y = np.atleast_1d(np.asarray(measurement, dtype=np.float64))
    K = sensor.gain if sensor.gain is not None else np.zeros((x.size, y.size))
    disagreement = np.zeros_like(x)
    # sequential accumulation in neighbor order keeps results order-stable
    for r in range(len(rows)):
        disagreement += x - rows[r]
    return A @ x + K @ (y - sensor.meas_matrix @ x) - consensus_weight * (A @ disagreement)
