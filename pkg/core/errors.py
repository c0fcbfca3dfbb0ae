"""Exception hierarchy for ttsolve.

Non-convergence is not an error: solvers report it through
``SolveReport.converged``.
"""

from typing import Sequence

import numpy as np


class TTSolveError(Exception):
    """Base class for all ttsolve errors."""


class ContractViolation(TTSolveError, ValueError):
    """A pre-condition of an operation does not hold (shapes, ranks, markers)."""


class OracleTooLargeError(TTSolveError):
    """A dense reconstruction would exceed the configured entry limit."""


class IndefiniteGramError(TTSolveError, np.linalg.LinAlgError):
    """Cholesky factorization failed even after the maximal diagonal shift."""


class DegeneratePrecondError(TTSolveError):
    """The rank-1 approximation of the operator vanished."""


class ConfigError(TTSolveError):
    """The run configuration could not be validated."""


class BreakdownError(TTSolveError):
    """Arnoldi breakdown: the new direction vanished during orthogonalization.

    Attributes:
        coeffs: Hessenberg column computed so far (last entry is the remaining norm)
        happy: True when the remainder vanished because W lies in the basis span
    """

    def __init__(self, message: str, coeffs: Sequence[float], happy: bool = True):
        super().__init__(message)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.happy = happy
