"""Neural-ODE classifiers with piecewise-constant parameters, their
finite-time Lyapunov exponent (FTLE) fields, and FTLE-suppressed training.

Heavy grid sweeps dispatch to a compiled kernel module when it is available;
see ftlenode._backend for the selection logic.
"""

from . import (
    analysis,
    checkpoint,
    data,
    ftle,
    integrator,
    linalg,
    presets,
    training,
    vecfield,
)
from ._backend import active_backend
from .errors import (
    AlignmentError,
    DegenerateTangentError,
    DivergenceError,
    InvalidInputError,
    OutOfDomainError,
    TrainingDivergedError,
)

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "checkpoint",
    "data",
    "ftle",
    "integrator",
    "linalg",
    "presets",
    "training",
    "vecfield",
    "active_backend",
    "AlignmentError",
    "DegenerateTangentError",
    "DivergenceError",
    "InvalidInputError",
    "OutOfDomainError",
    "TrainingDivergedError",
    "__version__",
]
