"""Error types shared across the package."""


class InvalidInputError(ValueError):
    """Malformed argument: wrong shape, non-finite entries, bad range."""


class OutOfDomainError(ValueError):
    """Time outside the schedule horizon [0, T)."""


class AlignmentError(ValueError):
    """Interval endpoints do not sit on the integration step grid."""


class DivergenceError(RuntimeError):
    """Non-finite state or tangent encountered while integrating.

    step_index is -1 when the failure is not localized to one step (batch
    sweeps only report that some step overflowed)."""

    def __init__(self, message: str, step_index: int = -1):
        super().__init__(message)
        self.step_index = step_index


class DegenerateTangentError(ValueError):
    """Tangent matrix is numerically singular; exponents undefined."""


class TrainingDivergedError(RuntimeError):
    """Training hit non-finite numbers; carries the last stable state."""

    def __init__(self, message: str, epoch: int, theta):
        super().__init__(message)
        self.epoch = epoch
        self.theta = theta
