"""Exception types shared across the package.

Input problems raise ``ValueError``.  Failures of a numerical procedure on
valid input raise a subclass of :class:`NumericalFailure`; the command line
maps the two families to different exit codes.
"""


class NumericalFailure(RuntimeError):
    """A numerical procedure could not produce a trustworthy result."""


class ConvergenceError(NumericalFailure):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class StagnationError(ConvergenceError):
    """The nonlinear residual stopped decreasing."""


class DegenerateChartError(NumericalFailure):
    """A level-set chart lost regularity (vanishing gradient, folding)."""
