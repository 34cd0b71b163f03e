"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes, so every failure raised by the numerical
code should derive from :class:`LabError`.
"""


class LabError(Exception):
    """Base class for all errors raised by hartreelab."""


class ParameterError(LabError, ValueError):
    """An argument is outside its admissible range."""


class ShapeError(LabError, ValueError):
    """Array shapes or grids do not match."""


class CapacityError(LabError):
    """A basis or requested state would exceed the configured dimension."""


class NumericalError(LabError, ArithmeticError):
    """Base class for failures of a numerical method."""


class TruncationError(NumericalError):
    """Fock-space truncation lost more weight than the budget allows."""

    def __init__(self, message, required_cutoff=None):
        super().__init__(message)
        self.required_cutoff = required_cutoff


class ConvergenceError(NumericalError):
    """An iterative method did not reach its tolerance."""


class DivergenceError(NumericalError):
    """A time integrator produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UndefinedDensityError(LabError, ValueError):
    """The reduced density matrix of a state with no particles was requested."""


class ConfigError(LabError):
    """The experiment configuration is missing or malformed."""
