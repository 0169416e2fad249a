"""Distributed attack detection for consensus state estimation.

Partitioning of sensor neighborhoods by observation subspace, dynamic false
data injection, and the two-stage D-ADS suspect scheduler.
"""
from .errors import (AttackConstraintError, ConfigError, ContractViolation, DadsError,
                     DivergedGainError, InfeasiblePartitionError,
                     UndefinedSubspaceError, UnobservableNeighborhoodError)

__version__ = "0.1.0"

__all__ = [
    "AttackConstraintError", "ConfigError", "ContractViolation", "DadsError",
    "DivergedGainError", "InfeasiblePartitionError", "UndefinedSubspaceError",
    "UnobservableNeighborhoodError", "__version__",
]
