"""Boundary contractions of the projected operator and right-hand side.

For a split at site j the left environment contracts cores ``0 .. j-1`` of a
test train, the operator and a trial train into an array ``W[p, alpha, q]``
of shape ``(r_j, ra_j, r_j)`` (test rank, operator rank, trial rank). The
right environment contracts cores ``j+1 .. d-1`` the same way. Right-hand
side environments drop the middle index: ``w[p, gamma]``.
"""

from typing import List, Optional, Sequence

import numpy as np
import opt_einsum as oe

from ttsolve.core.dense import contract
from ttsolve.core.errors import ContractViolation
from ttsolve.core.fast import LocalOp, local_rhs, prepare_local_op
from ttsolve.core.tensor_train import TensorTrain, TTOperator, left_unfold, op_reverse, right_unfold, tt_reverse
from ttsolve.utils.logger import setup_logger

logger = setup_logger()


def boundary_env() -> np.ndarray:
    return np.ones((1, 1, 1))


def boundary_rhs_env() -> np.ndarray:
    return np.ones((1, 1))


def env_update_left(env: np.ndarray, test_core: np.ndarray, a_core: np.ndarray,
                    trial_core: Optional[np.ndarray] = None) -> np.ndarray:
    """Absorb one site into a left operator environment.

    Args:
        env: W[p, alpha, q] of shape (rt, ra, rq)
        test_core: core paired with the operator's row index
        a_core: operator core (ra, n, m, ra')
        trial_core: core paired with the column index (defaults to ``test_core``)

    Returns:
        W'[p', beta, q'] of shape (rt', ra', rq')
    """
    trial = test_core if trial_core is None else trial_core
    rt, ra, rq = env.shape
    rt0, n, rt1 = test_core.shape
    rq0, m, rq1 = trial.shape
    a0, an, am, a1 = a_core.shape
    if (rt, rq, ra) != (rt0, rq0, a0) or (n, m) != (an, am):
        raise ContractViolation(
            f"Environment {env.shape} does not fit test core {test_core.shape}, "
            f"operator core {a_core.shape} and trial core {trial.shape}"
        )
    step = contract(env.reshape(rt * ra, rq), right_unfold(trial)).reshape(rt, ra, m, rq1)
    step = step.transpose(0, 3, 1, 2).reshape(rt * rq1, ra * m)
    step = contract(step, a_core.transpose(0, 2, 1, 3).reshape(a0 * m, n * a1)).reshape(rt, rq1, n, a1)
    step = step.transpose(0, 2, 3, 1).reshape(rt * n, a1 * rq1)
    return contract(left_unfold(test_core), step, trans_a=True).reshape(rt1, a1, rq1)


def env_update_right(env: np.ndarray, test_core: np.ndarray, a_core: np.ndarray,
                     trial_core: Optional[np.ndarray] = None) -> np.ndarray:
    """Absorb one site into a right operator environment (mirror of ``env_update_left``)."""
    trial = None if trial_core is None else trial_core.transpose(2, 1, 0)
    return env_update_left(env, test_core.transpose(2, 1, 0), a_core.transpose(3, 1, 2, 0), trial)


def rhs_env_update_left(env: np.ndarray, test_core: np.ndarray, b_core: np.ndarray) -> np.ndarray:
    rt, g = env.shape
    rt0, n, rt1 = test_core.shape
    g0, bn, g1 = b_core.shape
    if (rt, g, n) != (rt0, g0, bn):
        raise ContractViolation(
            f"Right-hand side environment {env.shape} does not fit cores {test_core.shape} and {b_core.shape}"
        )
    half = contract(env, right_unfold(b_core)).reshape(rt * n, g1)
    return contract(left_unfold(test_core), half, trans_a=True)


def rhs_env_update_right(env: np.ndarray, test_core: np.ndarray, b_core: np.ndarray) -> np.ndarray:
    return rhs_env_update_left(env, test_core.transpose(2, 1, 0), b_core.transpose(2, 1, 0))


def left_env_from_scratch(a: TTOperator, test: TensorTrain, j: int,
                          trial: Optional[TensorTrain] = None) -> np.ndarray:
    """Left environment at site j as a single opt_einsum network (uncounted oracle)."""
    trial = test if trial is None else trial
    if j == 0:
        return boundary_env()
    operands = []
    for k in range(j):
        t, o, q, i, jj = 3 * k, 3 * k + 1, 3 * k + 2, 3 * j + 3 + 2 * k, 3 * j + 4 + 2 * k
        operands += [test.cores[k], [t, i, t + 3], a.cores[k], [o, i, jj, o + 3], trial.cores[k], [q, jj, q + 3]]
    operands += [np.ones(1), [0], np.ones(1), [1], np.ones(1), [2]]
    return oe.contract(*operands, [3 * j, 3 * j + 1, 3 * j + 2])


def right_env_from_scratch(a: TTOperator, test: TensorTrain, j: int,
                           trial: Optional[TensorTrain] = None) -> np.ndarray:
    d = test.d
    mirrored_trial = None if trial is None else tt_reverse(trial)
    return left_env_from_scratch(op_reverse(a), tt_reverse(test), d - 1 - j, mirrored_trial)


class Environment:
    """Cached left/right environments of ``x^T A x`` and ``x^T b`` along a sweep.

    ``left[j]`` and ``right[j]`` are the environments seen by site j; the
    boundary ones are the scalar 1. Entries that are not current are ``None``.
    """

    def __init__(self, a: TTOperator, b: Optional[TensorTrain] = None):
        if b is not None and b.dims != a.col_dims:
            raise ContractViolation(f"Right-hand side dims {b.dims} do not match operator {a.col_dims}")
        self.a = a
        self.b = b
        d = a.d
        self.left: List[Optional[np.ndarray]] = [None] * d
        self.right: List[Optional[np.ndarray]] = [None] * d
        self.rhs_left: List[Optional[np.ndarray]] = [None] * d
        self.rhs_right: List[Optional[np.ndarray]] = [None] * d
        self.left[0] = boundary_env()
        self.right[d - 1] = boundary_env()
        self.rhs_left[0] = boundary_rhs_env()
        self.rhs_right[d - 1] = boundary_rhs_env()

    @classmethod
    def for_train(cls, a: TTOperator, x: TensorTrain, b: Optional[TensorTrain] = None) -> "Environment":
        """Environment ready for a left-to-right sweep: every right environment is built."""
        env = cls(a, b)
        for j in range(x.d - 1, 0, -1):
            env.update_right(j, x.cores[j])
        return env

    @property
    def d(self) -> int:
        return self.a.d

    def update_left(self, j: int, core: np.ndarray) -> None:
        """Absorb the (now final) core j into the left environment of site j+1."""
        self.left[j + 1] = env_update_left(self.left[j], core, self.a.cores[j])
        if self.b is not None:
            self.rhs_left[j + 1] = rhs_env_update_left(self.rhs_left[j], core, self.b.cores[j])

    def update_right(self, j: int, core: np.ndarray) -> None:
        self.right[j - 1] = env_update_right(self.right[j], core, self.a.cores[j])
        if self.b is not None:
            self.rhs_right[j - 1] = rhs_env_update_right(self.rhs_right[j], core, self.b.cores[j])

    def local_op(self, j: int, sites: int = 1) -> LocalOp:
        cores: Sequence[np.ndarray] = self.a.cores[j : j + sites]
        return prepare_local_op(self.left[j], list(cores), self.right[j + sites - 1])

    def local_rhs(self, j: int, sites: int = 1) -> np.ndarray:
        if self.b is None:
            raise ContractViolation("Environment was built without a right-hand side")
        return local_rhs(self.rhs_left[j], list(self.b.cores[j : j + sites]), self.rhs_right[j + sites - 1])

    def mirrored(self) -> "Environment":
        """The same environments seen from the mode-reversed problem."""
        env = Environment(op_reverse(self.a), None if self.b is None else tt_reverse(self.b))
        env.left = self.right[::-1]
        env.right = self.left[::-1]
        env.rhs_left = self.rhs_right[::-1]
        env.rhs_right = self.rhs_left[::-1]
        return env
