"""Exception types raised by surrogate_da."""


class SurrogateDAError(Exception):
    """Base class for all package errors."""


class NumericalOverflowError(SurrogateDAError, ArithmeticError):
    """A time step produced non-finite values."""


class DegenerateLikelihoodError(SurrogateDAError):
    """Every particle received a numerically zero likelihood."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DivergedTrainingError(SurrogateDAError):
    """The relaxed cost became non-finite during training."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class PipelineError(SurrogateDAError):
    """Wraps a failure inside the sub-interval loop with its (m, j) position."""

    def __init__(self, message, m=None, j=None):
        super().__init__(message)
        self.m = m
        self.j = j
