"""Exception hierarchy shared by all fecgkit modules."""


class FecgkitError(Exception):
    """Base class for all errors raised by fecgkit."""


class ValidationError(FecgkitError):
    """An input violates a documented precondition or invariant."""


class NumericalError(FecgkitError):
    """A numerical procedure failed (singularity, blow-up, no convergence)."""


class FilterDivergenceError(NumericalError):
    """A recursive filter diverged; carries the sample index where it aborted."""

    def __init__(self, message: str, sample: int):
        super().__init__(message)
        self.sample = sample
