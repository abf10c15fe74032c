"""Deterministic federated-learning simulator with gradient-centralized strategies.

The package provides a 64-bit, fully seeded simulation stack: a small dense
neural-network core, gradient-centralization operators, Dirichlet data
partitioning, a federated round loop with pluggable strategies (FedAvg,
FedProx, Local GC, Global GC, and the hybrid GC-Fed), analysis metrics
(accuracy, update discrepancy, linear CKA), and a numerical harness that
checks the one-step projection theory on quadratic problems.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, IdxFormatError, NotCentralizableError, RoundFailure

__all__ = [
    "ConfigError",
    "DataError",
    "IdxFormatError",
    "NotCentralizableError",
    "RoundFailure",
    "__version__",
]
