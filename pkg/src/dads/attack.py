"""Dynamic false-data-injection attacks on neighbor-to-sensor links.

At every step the attacker picks a uniformly random ``q``-subset of a
receiver's in-neighbors and adds a bounded signal ``z_ij`` to the estimates
those neighbors send. Two amplitude families are supported:

* ``unstealthy``: ``|z| ~ U[5b, 10b]``, far above the estimation noise;
* ``stealthy``:   ``|z| ~ U[1b, 2b]``, at the noise floor.

``b`` is the measurement noise bound.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import AttackConstraintError, ContractViolation

AMPLITUDE_BANDS = {"unstealthy": (5.0, 10.0), "stealthy": (1.0, 2.0)}


class Family(str, Enum):
    STEALTHY = "stealthy"
    UNSTEALTHY = "unstealthy"


class SignMode(str, Enum):
    INDEPENDENT = "independent"   # fresh sign per link, dimension and step
    COORDINATED = "coordinated"   # one sign per receiver, dimension and step
    PERSISTENT = "persistent"     # one sign per receiver and dimension for the whole run


@dataclass(frozen=True)
class AttackConfig:
    q: int
    family: Family = Family.UNSTEALTHY
    attacked_dims: tuple[int, ...] = (2, 3)
    redraw_each_step: bool = True
    noise_bound: float = 0.05
    sign_mode: SignMode = SignMode.INDEPENDENT

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "sign_mode", SignMode(self.sign_mode))
        object.__setattr__(self, "attacked_dims", tuple(int(d) for d in self.attacked_dims))
        if self.q < 0:
            raise AttackConstraintError("q must be nonnegative")

    def check_neighborhood(self, size: int) -> None:
        if self.q > size // 2:
            raise AttackConstraintError(
                f"q={self.q} exceeds half of a {size}-sensor neighborhood")

    @property
    def amplitude_range(self) -> tuple[float, float]:
        lo, hi = AMPLITUDE_BANDS[self.family.value]
        return lo * self.noise_bound, hi * self.noise_bound


def draw_compromised(neighbors: Sequence[int], cfg: AttackConfig,
                     rng: np.random.Generator) -> frozenset[int]:
    neighbors = sorted(int(j) for j in neighbors)
    cfg.check_neighborhood(len(neighbors))
    if cfg.q == 0:
        return frozenset()
    idx = rng.choice(len(neighbors), size=cfg.q, replace=False)
    return frozenset(neighbors[i] for i in idx)


def draw_signal(n: int, cfg: AttackConfig, rng: np.random.Generator,
                signs: np.ndarray | None = None) -> np.ndarray:
    """Attack vector: zero off ``attacked_dims``, banded magnitude on them."""
    z = np.zeros(n)
    dims = [d for d in cfg.attacked_dims]
    if not dims:
        return z
    if max(dims) >= n or min(dims) < 0:
        raise ContractViolation(f"attacked dims {dims} outside a {n}-dim state")
    lo, hi = cfg.amplitude_range
    mag = rng.uniform(lo, hi, size=len(dims))
    if signs is None:
        signs = np.where(rng.random(len(dims)) < 0.5, -1.0, 1.0)
    z[dims] = mag * signs
    return z


def inject(sensor_estimate, cfg: AttackConfig, rng: np.random.Generator,
           signs: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(sensor_estimate, dtype=np.float64)
    z = draw_signal(x.size, cfg, rng, signs)
    return x + z, z


@dataclass
class AttackTrace:
    """Per-step record of one receiver's compromised links."""

    receiver: int
    compromised: list[frozenset[int]] = field(default_factory=list)
    signals: list[dict[int, np.ndarray]] = field(default_factory=list)
    delta_total: int = 0
    power: np.ndarray | None = None   # running sum of ||z||^2 per attacker slot

    @property
    def steps(self) -> int:
        return len(self.compromised)

    def record(self, compromised: frozenset[int], signals: dict[int, np.ndarray]) -> None:
        if self.compromised:
            self.delta_total += len(compromised ^ self.compromised[-1])
        self.compromised.append(compromised)
        self.signals.append(signals)
        slots = np.array([float(signals[j] @ signals[j]) for j in sorted(compromised)])
        if self.power is None:
            self.power = np.zeros(slots.size)
        if slots.size:
            self.power = self.power + slots

    def disturbance_power(self) -> np.ndarray:
        """Average injected power per attacker slot."""
        if self.power is None or not self.steps:
            return np.zeros(0)
        return self.power / self.steps


class DynamicAttacker:
    """Attacks every in-link of one receiver with a fresh random set per step."""

    def __init__(self, receiver: int, neighbors: Sequence[int], cfg: AttackConfig,
                 rng: np.random.Generator):
        self.receiver = receiver
        self.neighbors = sorted(int(j) for j in neighbors)
        cfg.check_neighborhood(len(self.neighbors))
        self.cfg = cfg
        self.rng = rng
        self.trace = AttackTrace(receiver)
        self._held: frozenset[int] | None = None
        self._signs: np.ndarray | None = None

    def tamper(self, rows: np.ndarray) -> np.ndarray:
        """Tamper a ``(len(neighbors), n)`` block of estimates in neighbor order."""
        cfg = self.cfg
        if cfg.redraw_each_step or self._held is None:
            self._held = draw_compromised(self.neighbors, cfg, self.rng)
        A_k = self._held
        n = rows.shape[1]
        signs = None
        if cfg.sign_mode is SignMode.COORDINATED and cfg.attacked_dims:
            signs = np.where(self.rng.random(len(cfg.attacked_dims)) < 0.5, -1.0, 1.0)
        elif cfg.sign_mode is SignMode.PERSISTENT and cfg.attacked_dims:
            if self._signs is None:
                self._signs = np.where(self.rng.random(len(cfg.attacked_dims)) < 0.5, -1.0, 1.0)
            signs = self._signs
        out = np.array(rows, dtype=np.float64, copy=True)
        signals = {}
        for r, j in enumerate(self.neighbors):
            if j in A_k:
                z = draw_signal(n, cfg, self.rng, signs)
                signals[j] = z
                out[r] += z
        self.trace.record(A_k, signals)
        return out

    def step(self, estimates: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
        """Return the estimates as received by ``receiver`` after tampering."""
        rows = np.array([np.asarray(estimates[j], dtype=np.float64) for j in self.neighbors])
        out = self.tamper(rows)
        return {j: out[r] for r, j in enumerate(self.neighbors)}


@dataclass
class BalanceStats:
    mean_attacked: np.ndarray
    intensity_ratio: np.ndarray
    undefined_ratio: bool = False


def balance_stats(trace: AttackTrace, partition) -> BalanceStats:
    """Per-subset mean attacked count and share of injected power."""
    m = partition.m
    if not trace.steps:
        return BalanceStats(np.zeros(m), np.zeros(m), True)
    label = partition.label_of()
    counts = np.zeros(m)
    power = np.zeros(m)
    for A_k, sig in zip(trace.compromised, trace.signals):
        for j in A_k:
            g = label[j]
            counts[g] += 1
            power[g] += float(sig[j] @ sig[j])
    total = power.sum()
    if total == 0:
        return BalanceStats(counts / trace.steps, np.zeros(m), True)
    return BalanceStats(counts / trace.steps, power / total, False)
