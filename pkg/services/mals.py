"""Modified ALS: two-site sweeps with a factored inner TT-GMRES solve per pair."""

import math
from typing import Optional, Tuple

import numpy as np

from ttsolve.config import Config
from ttsolve.core.dense import contract, householder_qr, truncated_svd
from ttsolve.core.errors import ContractViolation
from ttsolve.core.fast import fast_truncate, local_apply, merge_train_cores
from ttsolve.core.interfaces import ILinearSolver
from ttsolve.core.models import MalsInner, MalsOptions
from ttsolve.core.report_models import SolveReport
from ttsolve.core.tensor_train import (
    RIGHT,
    TensorTrain,
    TTOperator,
    orthogonalize,
    tt_norm,
    tt_residual_norm,
    tt_reverse,
)
from ttsolve.services.amen import default_initial_guess
from ttsolve.services.environment import Environment
from ttsolve.services.gmres import TTGmresSolver
from ttsolve.services.local_solver import dense_gmres
from ttsolve.services.recorder import RunRecorder
from ttsolve.utils.logger import setup_logger

logger = setup_logger()


def pair_operator(left_env: np.ndarray, first: np.ndarray, second: np.ndarray, right_env: np.ndarray,
                  symmetric: bool = False) -> TTOperator:
    """Projected operator of sites (j, j+1) as a two-mode TT operator.

    Mode 0 fuses (left rank, n_j), mode 1 fuses (n_{j+1}, right rank).
    """
    r0, a0, _ = left_env.shape
    _, n0, _, a1 = first.shape
    _, n1, _, a2 = second.shape
    r2 = right_env.shape[0]
    head = contract(left_env.transpose(0, 2, 1).reshape(r0 * r0, a0), first.reshape(a0, n0 * n0 * a1))
    head = head.reshape(r0, r0, n0, n0, a1).transpose(0, 2, 1, 3, 4).reshape(1, r0 * n0, r0 * n0, a1)
    tail = contract(second.reshape(a1 * n1 * n1, a2), right_env.transpose(1, 0, 2).reshape(a2, r2 * r2))
    tail = tail.reshape(a1, n1, n1, r2, r2).transpose(0, 1, 3, 2, 4).reshape(a1, n1 * r2, n1 * r2, 1)
    return TTOperator([head, tail], symmetric)


def pair_rhs(left_env: np.ndarray, first: np.ndarray, second: np.ndarray, right_env: np.ndarray) -> TensorTrain:
    r0 = left_env.shape[0]
    g0, n0, g1 = first.shape
    _, n1, g2 = second.shape
    r2 = right_env.shape[0]
    head = contract(left_env, first.reshape(g0, n0 * g1)).reshape(1, r0 * n0, g1)
    tail = contract(second.reshape(g1 * n1, g2), right_env, trans_b=True).reshape(g1, n1 * r2, 1)
    return TensorTrain([head, tail])


class TTMalsSolver(ILinearSolver):
    name = "mals"

    def __init__(self, epsilon: float = 1e-8, max_sweeps: int = 20, options: Optional[MalsOptions] = None,
                 seed: int = 0):
        if epsilon <= 0 or max_sweeps < 1:
            raise ContractViolation("MALS needs epsilon > 0 and max_sweeps >= 1")
        self.epsilon = epsilon
        self.max_sweeps = max_sweeps
        self.options = options or MalsOptions()
        self.seed = seed

    def _inner_reduction(self, residual: float, b_norm: float) -> float:
        """Factor by which a pair solve reduces its local residual."""
        eps_bar = max(math.sqrt(self.epsilon), self.epsilon * b_norm / max(residual, 1e-300))
        return min(eps_bar, 0.5)

    def _solve_pair_tt(self, env: Environment, x: TensorTrain, j: int, reduction: float,
                       symmetric: bool) -> Tuple[TensorTrain, float, float]:
        a, b = env.a, env.b
        op = pair_operator(env.left[j], a.cores[j], a.cores[j + 1], env.right[j + 1], symmetric)
        rhs = pair_rhs(env.rhs_left[j], b.cores[j], b.cores[j + 1], env.rhs_right[j + 1])
        c0, c1 = x.cores[j], x.cores[j + 1]
        guess = TensorTrain([c0.reshape(1, c0.shape[0] * c0.shape[1], c0.shape[2]),
                             c1.reshape(c1.shape[0], c1.shape[1] * c1.shape[2], 1)])
        local_norm = tt_norm(rhs)
        start = tt_residual_norm(op, guess, rhs)
        if local_norm == 0.0 or start <= 1e-14 * local_norm:
            return guess, start, 1.0
        config = self.options.inner.model_copy(update={
            "epsilon": reduction * start / local_norm,
            "symmetric": symmetric,
        })
        y, report = TTGmresSolver(config, name="mals-inner", quiet=True).solve(op, rhs, guess)
        return y, start, report.norm_estimate or 1.0

    def _solve_pair_dense(self, env: Environment, x: TensorTrain, j: int,
                          reduction: float) -> Tuple[np.ndarray, float, float]:
        op = env.local_op(j, sites=2)
        f = env.local_rhs(j, sites=2)
        guess = merge_train_cores(x.cores[j], x.cores[j + 1])
        start = float(np.linalg.norm(f - local_apply(op, guess)))
        result = dense_gmres(lambda v: local_apply(op, v), f, guess, abs_tol=reduction * start,
                             max_iters=min(self.options.local_max_iters, op.size))
        return result.x, start, result.norm_estimate or 1.0

    @staticmethod
    def _split_dense(y: np.ndarray, n0: int, tol: float, turning: bool) -> Tuple[np.ndarray, np.ndarray]:
        r0, nn, r2 = y.shape
        n1 = nn // n0
        u, s, v = truncated_svd(y.reshape(r0 * n0, n1 * r2), tol)
        if turning:
            return (u * s).reshape(r0, n0, len(s)), v.T.reshape(len(s), n1, r2)
        return u.reshape(r0, n0, len(s)), (s[:, None] * v.T).reshape(len(s), n1, r2)

    @staticmethod
    def _split_tt(y: TensorTrain, shapes: Tuple[Tuple[int, int], Tuple[int, int]], tol: float,
                  turning: bool) -> Tuple[np.ndarray, np.ndarray]:
        (r0, n0), (n1, r2) = shapes
        z = fast_truncate(y, abs_tol=tol)
        head, tail = z.cores[0][0], z.cores[1][:, :, 0]
        if not turning:
            q, r = householder_qr(head)
            head, tail = q, contract(r, tail)
        rank = head.shape[1]
        return head.reshape(r0, n0, rank), tail.reshape(rank, n1, r2)

    def _half_sweep(self, env: Environment, x: TensorTrain, half: int, residual: float, b_norm: float,
                    recorder: RunRecorder, mirrored: bool, symmetric: bool) -> None:
        d = x.d
        start = 0 if half == 0 or d == 2 else 1
        reduction = self._inner_reduction(residual, b_norm)
        for j in range(start, d - 1):
            turning = j == d - 2
            r0, n0, _ = x.cores[j].shape
            _, n1, r2 = x.cores[j + 1].shape
            if self.options.mals_inner == MalsInner.DENSE:
                y, local, norm_estimate = self._solve_pair_dense(env, x, j, reduction)
                tol = 0.5 * self.epsilon * b_norm / (math.sqrt(d - 1) * norm_estimate)
                first, second = self._split_dense(y, n0, tol, turning)
            else:
                y, local, norm_estimate = self._solve_pair_tt(env, x, j, reduction, symmetric)
                tol = 0.5 * self.epsilon * b_norm / (math.sqrt(d - 1) * norm_estimate)
                first, second = self._split_tt(y, ((r0, n0), (n1, r2)), tol, turning)
            x.cores[j], x.cores[j + 1] = first, second
            if turning:
                x.mark(j, d - 1 - j)
                env.update_right(j + 1, second)
            else:
                x.mark(j + 1, d - 2 - j)
                env.update_left(j, first)
            site = d - 2 - j if mirrored else j
            recorder.record(local / b_norm, x.ranks if not mirrored else x.ranks[::-1], sweep=half, site=site)
            logger.debug(f"mals half-sweep {half} pair {site}: local residual/||B|| = {local / b_norm:.3e}, "
                         f"rank {first.shape[2]}")

    def solve(self, a: TTOperator, b: TensorTrain, x0: Optional[TensorTrain] = None) -> Tuple[TensorTrain, SolveReport]:
        if a.col_dims != b.dims:
            raise ContractViolation(f"Operator {a.col_dims} and right-hand side {b.dims} do not match")
        if b.d < 2:
            raise ContractViolation("MALS needs at least two modes")
        b_norm = tt_norm(b)
        if b_norm == 0.0:
            raise ContractViolation("The right-hand side must not vanish")
        if x0 is not None and x0.dims != b.dims:
            raise ContractViolation(f"Initial guess {x0.dims} and right-hand side {b.dims} do not match")

        recorder = RunRecorder(self.name)
        target = self.epsilon * b_norm
        symmetric = a.symmetric
        x = default_initial_guess(b.dims, self.seed) if x0 is None else x0.copy()
        x.mark(0, 0)
        orthogonalize(x, RIGHT)
        env = Environment.for_train(a, x, b)
        residual = tt_residual_norm(a, x, b)
        logger.info(f"{self.name}: d={b.d}, eps={self.epsilon:g}, inner={self.options.mals_inner.value}, "
                    f"max_sweeps={self.max_sweeps}")

        converged = False
        mirrored = False
        half = 0
        for half in range(2 * self.max_sweeps):
            self._half_sweep(env, x, half, residual, b_norm, recorder, mirrored, symmetric)
            current = tt_reverse(x) if mirrored else x
            residual = tt_residual_norm(a, current, b, abs_tol=Config.RESIDUAL_CHECK_FACTOR * target)
            if residual <= target:
                residual = tt_residual_norm(a, current, b)
            recorder.trace[-1].true_residual = residual / b_norm
            if residual <= target:
                converged = True
                break
            x = tt_reverse(x)
            env = env.mirrored()
            mirrored = not mirrored

        x = tt_reverse(x) if mirrored else x
        final = tt_residual_norm(a, x, b) / b_norm
        if converged:
            logger.info(f"{self.name} converged after {half + 1} half-sweeps, residual {final:.3e}, "
                        f"max rank {x.max_rank}")
        else:
            logger.info(f"{self.name}: not converged in {self.max_sweeps} sweeps (residual {final:.3e})")
        report = recorder.finish(x, converged, final, iterations=len(recorder.trace), sweeps=half + 1)
        return x, report


def tt_mals(a: TTOperator, b: TensorTrain, x0: Optional[TensorTrain] = None, epsilon: float = 1e-8,
            max_sweeps: int = 20, options: Optional[MalsOptions] = None) -> Tuple[TensorTrain, SolveReport]:
    return TTMalsSolver(epsilon, max_sweeps, options).solve(a, b, x0)
