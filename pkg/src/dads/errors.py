"""Exception hierarchy shared across the package."""


class DadsError(Exception):
    """Base class for all package errors."""


class ContractViolation(DadsError, ValueError):
    """An input broke an operation's precondition (shape, membership, ...)."""


class DivergedGainError(DadsError):
    """Steady-state Riccati iteration failed for a sensor."""

    def __init__(self, sensor_id, reason):
        self.sensor_id = sensor_id
        super().__init__(f"sensor {sensor_id}: gain diverged ({reason})")


class UnobservableNeighborhoodError(ContractViolation):
    """A node's in-neighborhood does not jointly observe the state."""


class InfeasiblePartitionError(ContractViolation):
    """Requested more subsets than there are elements."""


class UndefinedSubspaceError(ContractViolation):
    """Grassmann distance asked for a zero indicator vector."""


class AttackConstraintError(ContractViolation):
    """Compromised count exceeds half of the neighborhood."""


class ConfigError(DadsError):
    """Scenario configuration is malformed."""
