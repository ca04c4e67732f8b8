"""
Exception hierarchy shared by the solver library and the command line runners.

The command line maps each family onto a process exit code, see `exit_code_for`.
"""

import logging
import sys
from contextlib import contextmanager
from typing import Iterator


class IsacDesignError(Exception):
    pass


class ConfigurationError(IsacDesignError, ValueError):
    """Invalid scenario, solver settings or input files."""


class DomainError(IsacDesignError, ValueError):
    """An argument lies outside the domain of the operation."""


class RootFindingError(IsacDesignError, ArithmeticError):
    """The monotone root finder could not bracket a sign change."""


class InfeasibilityError(IsacDesignError):
    """No point satisfying the power and communication constraints was reached."""


class SolverConsistencyError(IsacDesignError, AssertionError):
    """A convergence property that holds by construction was violated."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (SolverConsistencyError, RootFindingError)):
        return 3
    if isinstance(exc, InfeasibilityError):
        return 2
    # ConfigurationError, DomainError and anything else we raise
    return 1


@contextmanager
def exit_codes(logger: logging.Logger) -> Iterator[None]:
    """Logs a package error and exits the process with its code."""
    try:
        yield
    except IsacDesignError as e:
        logger.error(f"{type(e).__name__}: {e}")
        sys.exit(exit_code_for(e))
