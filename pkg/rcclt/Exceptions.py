"""Exceptions raised by the rcclt package.

Every exception carries the exit code the command line reports for it.
"""


class RccltError(Exception):
    exit_code = 1


class ConfigurationError(RccltError, ValueError):
    """An invalid specification or configuration value."""

    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class UsageError(RccltError, ValueError):
    """Arguments that are individually valid but cannot be used together."""

    exit_code = 2


class ConvergenceError(RccltError, RuntimeError):
    """
    The corrector solve hit max_iter before reaching its tolerance.

    Attributes
    ----------
    residual : float
        Relative residual at the last iteration.
    iterations : int
        Number of iterations performed.
    env_seed : int or None
        Seed of the environment being solved, attached by the Monte Carlo
        driver when the failure happens inside a run.
    """

    exit_code = 3

    def __init__(self, message, residual=None, iterations=None, env_seed=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.env_seed = env_seed

    def __str__(self):
        msg = super().__str__()
        if self.env_seed is not None:
            msg = f"{msg} (environment seed {self.env_seed})"
        return msg


class CapacityError(RccltError, RuntimeError):
    """A dense computation was requested over its size limit."""

    exit_code = 3


class NumericalError(RccltError, RuntimeError):
    """The eigensolver failed. `report` holds condition diagnostics."""

    exit_code = 3

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class SegmentRangeError(RccltError, IndexError):
    """A one-dimensional walk left the precomputed conductance segment."""

    exit_code = 3

    def __init__(self, message, half_width=None):
        super().__init__(message)
        self.half_width = half_width


class AcceptanceError(RccltError, AssertionError):
    """An acceptance check requested with --check failed."""

    exit_code = 4

    def __init__(self, message, check=None):
        super().__init__(message)
        self.check = check
