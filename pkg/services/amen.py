"""Alternating minimal energy (AMEn) solvers.

Both variants sweep single sites, solve the projected local system with
dense GMRES and enrich the left-orthogonal core with residual directions
before moving on. The right-to-left half-sweep runs as a left-to-right
sweep over the mode-reversed problem.

* ``TTAmenSolver`` keeps the full residual ``A X - B`` in TT format and
  measures its norm exactly at every site through triangular factors of its
  orthogonalized left and right parts.
* ``SimplifiedAmenSolver`` only uses the local residual ``V_j^T (A X - B)``,
  both for enrichment and for the stopping test.
"""

import math
from typing import List, Optional, Tuple

import numpy as np

from ttsolve.config import Config
from ttsolve.core.dense import contract, householder_qr, qless_tsqr, truncated_svd
from ttsolve.core.errors import ContractViolation
from ttsolve.core.fast import LocalOp, local_apply, stable_orthogonal_complement
from ttsolve.core.interfaces import ILinearSolver
from ttsolve.core.models import AmenOptions
from ttsolve.core.report_models import SolveReport
from ttsolve.core.tensor_train import (
    RIGHT,
    TensorTrain,
    TTOperator,
    apply_op_core,
    left_unfold,
    orthogonalize,
    right_unfold,
    tt_norm,
    tt_random,
    tt_residual_norm,
    tt_reverse,
    tt_scale,
)
from ttsolve.services.environment import Environment
from ttsolve.services.local_solver import dense_gmres
from ttsolve.services.recorder import RunRecorder
from ttsolve.utils.logger import setup_logger

logger = setup_logger()


def default_initial_guess(dims, seed: int = 0) -> TensorTrain:
    """Seeded rank-1 random train."""
    return tt_random(dims, (1,) * (len(dims) + 1), seed=seed)


def enrichment_basis(u: np.ndarray, z: np.ndarray, k: int) -> np.ndarray:
    """Up to k orthonormal columns spanning the dominant part of Z outside range(U)."""
    rows = u.shape[0]
    capacity = min(k, rows - u.shape[1])
    if capacity <= 0 or z.size == 0 or not np.any(z):
        return np.zeros((rows, 0))
    # twice: Z may lie almost entirely in range(U)
    p = stable_orthogonal_complement(u, z)
    p = stable_orthogonal_complement(u, p)
    q, s, _ = truncated_svd(p, 0.0, capacity)
    keep = int(np.count_nonzero(s > 1e-14 * max(float(np.linalg.norm(z)), 1e-300)))
    return q[:, :keep]


def residual_block(a_core: np.ndarray, x_core: np.ndarray, nb_core: np.ndarray, k: int, d: int) -> np.ndarray:
    """Core k of the residual ``A X + NB`` in block form (ranks ``ra * rx + rb``)."""
    ax = apply_op_core(a_core, x_core)
    if d == 1:
        return ax + nb_core
    if k == 0:
        return np.concatenate((ax, nb_core), axis=2)
    if k == d - 1:
        return np.concatenate((ax, nb_core), axis=0)
    r0a, n, r1a = ax.shape
    r0b, _, r1b = nb_core.shape
    block = np.zeros((r0a + r0b, n, r1a + r1b))
    block[:r0a, :, :r1a] = ax
    block[r0a:, :, r1a:] = nb_core
    return block


class _SweepState:
    """Iterate, environments and (for the full variant) -B in the current orientation."""

    def __init__(self, x: TensorTrain, env: Environment, nb: TensorTrain):
        self.x = x
        self.env = env
        self.nb = nb
        self.mirrored = False

    @property
    def d(self) -> int:
        return self.x.d

    def site(self, j: int) -> int:
        return self.d - 1 - j if self.mirrored else j

    def flip(self) -> None:
        self.x = tt_reverse(self.x)
        self.env = self.env.mirrored()
        self.nb = tt_reverse(self.nb)
        self.mirrored = not self.mirrored

    def original_x(self) -> TensorTrain:
        return tt_reverse(self.x) if self.mirrored else self.x


class _AmenBase(ILinearSolver):
    def __init__(self, epsilon: float = 1e-8, max_sweeps: int = 20, options: Optional[AmenOptions] = None,
                 seed: int = 0):
        if epsilon <= 0 or max_sweeps < 1:
            raise ContractViolation("AMEn needs epsilon > 0 and max_sweeps >= 1")
        self.epsilon = epsilon
        self.max_sweeps = max_sweeps
        self.options = options or AmenOptions()
        self.seed = seed

    # --- shared site operations ---------------------------------------------------------

    def _local_solve(self, op: LocalOp, f: np.ndarray, x_core: np.ndarray, abs_tol: float) -> np.ndarray:
        result = dense_gmres(lambda v: local_apply(op, v), f, x_core, abs_tol=abs_tol,
                             max_iters=min(self.options.local_max_iters, op.size),
                             restarts=self.options.local_restarts)
        return result.x

    def _local_tolerance(self, delta: float, f: np.ndarray, d: int) -> float:
        return max(delta * self.options.inner_epsilon,
                   float(np.linalg.norm(f)) * self.epsilon / (2.0 * math.sqrt(max(d - 1, 1))))

    def _split(self, op: LocalOp, f: np.ndarray, y: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Left-unfolding SVD of the local solution, optionally cut to the smallest acceptable rank.

        A rank is acceptable when the truncated core's local residual stays
        within ``2 * tol``; the smallest one is found by bisection.
        """
        r0, n, r1 = y.shape
        u, s, v = truncated_svd(y.reshape(r0 * n, r1), 0.0)
        if not self.options.truncate_local or len(s) == 1:
            return u, s, v.T
        limit = 2.0 * tol
        lo, hi = 1, len(s)
        while lo < hi:
            mid = (lo + hi) // 2
            candidate = contract(u[:, :mid] * s[:mid], v[:, :mid], trans_b=True).reshape(y.shape)
            if np.linalg.norm(local_apply(op, candidate) - f) <= limit:
                hi = mid
            else:
                lo = mid + 1
        return u[:, :lo], s[:lo], v[:, :lo].T

    def _advance(self, state: _SweepState, j: int, u: np.ndarray, s: np.ndarray, vt: np.ndarray,
                 enrichment: Optional[np.ndarray]) -> None:
        """Store ``[U, Q]`` at site j, push ``S V^T`` (zero padded) into site j+1."""
        x = state.x
        d = x.d
        r0, n, _ = x.cores[j].shape
        q = enrichment if enrichment is not None else np.zeros((u.shape[0], 0))
        new_core = np.hstack((u, q)).reshape(r0, n, u.shape[1] + q.shape[1])
        nxt = x.cores[j + 1]
        moved = contract(s[:, None] * vt, right_unfold(nxt)).reshape(len(s), nxt.shape[1], nxt.shape[2])
        if q.shape[1]:
            moved = np.concatenate((moved, np.zeros((q.shape[1], nxt.shape[1], nxt.shape[2]))), axis=0)
        x.cores[j] = new_core
        x.cores[j + 1] = moved
        x.mark(j + 1, d - 2 - j)
        state.env.update_left(j, new_core)

    def _shift(self, state: _SweepState, j: int) -> None:
        """Move the orthogonality center from site j to j+1 without solving."""
        x = state.x
        core, nxt = x.cores[j], x.cores[j + 1]
        q, r = householder_qr(left_unfold(core))
        x.cores[j] = q.reshape(core.shape[0], core.shape[1], q.shape[1])
        x.cores[j + 1] = contract(r, right_unfold(nxt)).reshape(r.shape[0], nxt.shape[1], nxt.shape[2])
        x.mark(j + 1, x.d - 2 - j)
        state.env.update_left(j, x.cores[j])

    def _solve_single_core(self, state: _SweepState, target: float) -> float:
        op = state.env.local_op(0)
        f = state.env.local_rhs(0)
        y = self._local_solve(op, f, state.x.cores[0], target)
        state.x.cores[0] = y
        return float(np.linalg.norm(local_apply(op, y) - f))

    # --- driver -----------------------------------------------------------------------

    def _half_sweep(self, state: _SweepState, half: int, b_norm: float, recorder: RunRecorder) -> bool:
        raise NotImplementedError

    def solve(self, a: TTOperator, b: TensorTrain, x0: Optional[TensorTrain] = None) -> Tuple[TensorTrain, SolveReport]:
        if a.col_dims != b.dims:
            raise ContractViolation(f"Operator {a.col_dims} and right-hand side {b.dims} do not match")
        b_norm = tt_norm(b)
        if b_norm == 0.0:
            raise ContractViolation("The right-hand side must not vanish")
        if x0 is not None and x0.dims != b.dims:
            raise ContractViolation(f"Initial guess {x0.dims} and right-hand side {b.dims} do not match")

        recorder = RunRecorder(self.name)
        target = self.epsilon * b_norm
        x = default_initial_guess(b.dims, self.seed) if x0 is None else x0.copy()
        x.mark(0, 0)
        orthogonalize(x, RIGHT)
        state = _SweepState(x, Environment.for_train(a, x, b), tt_scale(b, -1.0))
        logger.info(f"{self.name}: d={b.d}, eps={self.epsilon:g}, k_enrich={self.options.k_enrich}, "
                    f"max_sweeps={self.max_sweeps}")

        converged = False
        true_residual = 0.0
        half = 0
        for half in range(2 * self.max_sweeps):
            if state.d == 1:
                local = self._solve_single_core(state, target)
                recorder.record(local / b_norm, state.x.ranks, sweep=half, site=0)
                estimate_ok = local <= target
            else:
                estimate_ok = self._half_sweep(state, half, b_norm, recorder)
            if estimate_ok:
                true_residual = tt_residual_norm(a, state.original_x(), b)
                recorder.trace[-1].true_residual = true_residual / b_norm
                if true_residual <= target:
                    converged = True
                    break
                message = (f"local estimate converged in half-sweep {half} but the true relative residual is "
                           f"{true_residual / b_norm:.3e}")
                recorder.notice(message)
                logger.warning(f"{self.name}: {message}")
            if state.d > 1:
                state.flip()

        x = state.original_x()
        if not converged:
            true_residual = tt_residual_norm(a, x, b)
            if recorder.trace:
                recorder.trace[-1].true_residual = true_residual / b_norm
        final = true_residual / b_norm
        if converged:
            logger.info(f"{self.name} converged after {half + 1} half-sweeps, residual {final:.3e}, "
                        f"max rank {x.max_rank}")
        else:
            logger.info(f"{self.name}: not converged in {self.max_sweeps} sweeps (residual {final:.3e})")
        report = recorder.finish(x, converged, final, iterations=len(recorder.trace), sweeps=half + 1)
        return x, report


class SimplifiedAmenSolver(_AmenBase):
    """AMEn driven by local residuals only."""

    name = "amen-simplified"

    def _half_sweep(self, state: _SweepState, half: int, b_norm: float, recorder: RunRecorder) -> bool:
        d = state.d
        threshold = self.epsilon * b_norm / (2.0 * math.sqrt(d - 1))
        max_delta = 0.0
        for j in range(d):
            if half > 0 and j == 0:
                # solved as the last site of the previous half-sweep
                self._shift(state, 0)
                continue
            op = state.env.local_op(j)
            f = state.env.local_rhs(j)
            core = state.x.cores[j]
            delta = float(np.linalg.norm(local_apply(op, core) - f))
            max_delta = max(max_delta, delta)
            tol = self._local_tolerance(delta, f, d)
            y = self._local_solve(op, f, core, tol)

            if j == d - 1:
                state.x.cores[j] = y
                state.x.mark(d - 1, 0)
            else:
                u, s, vt = self._split(op, f, y, tol)
                y_cut = contract(u * s, vt).reshape(y.shape)
                z = left_unfold(local_apply(op, y_cut) - f)
                self._advance(state, j, u, s, vt, enrichment_basis(u, z, self.options.k_enrich))
            recorder.record(delta / b_norm, state.x.ranks, sweep=half, site=state.site(j))
            logger.debug(f"{self.name} half-sweep {half} site {state.site(j)}: delta/||B|| = {delta / b_norm:.3e}, "
                         f"ranks {state.x.ranks}")
        return max_delta <= threshold


class TTAmenSolver(_AmenBase):
    """AMEn with the full residual kept as a block TT."""

    name = "amen"

    def _right_factors(self, state: _SweepState) -> List[Optional[np.ndarray]]:
        """Triangular factors T_k with ``(residual cores k..d-1) = T_k^T (orthonormal rows)``."""
        d = state.d
        a = state.env.a
        factors: List[Optional[np.ndarray]] = [None] * (d + 1)
        factors[d] = np.ones((1, 1))
        for k in range(d - 1, 0, -1):
            block = residual_block(a.cores[k], state.x.cores[k], state.nb.cores[k], k, d)
            r0, n, _ = block.shape
            nxt = factors[k + 1]
            c = contract(left_unfold(block), nxt, trans_b=True).reshape(r0, n * nxt.shape[0])
            factors[k] = qless_tsqr(c.T) if c.shape[1] >= r0 else c.T
        return factors

    @staticmethod
    def _left_factor(t_left: np.ndarray, block: np.ndarray) -> np.ndarray:
        m = t_left.shape[0]
        _, n, r1 = block.shape
        c = contract(t_left, right_unfold(block)).reshape(m * n, r1)
        return qless_tsqr(c) if c.shape[0] >= r1 else c

    def _half_sweep(self, state: _SweepState, half: int, b_norm: float, recorder: RunRecorder) -> bool:
        d = state.d
        target = self.epsilon * b_norm
        t_right = self._right_factors(state)
        t_left = np.ones((1, 1))
        a = state.env.a
        for j in range(d - 1):
            op = state.env.local_op(j)
            f = state.env.local_rhs(j)
            core = state.x.cores[j]
            delta = float(np.linalg.norm(local_apply(op, core) - f))
            tol = self._local_tolerance(delta, f, d)
            y = self._local_solve(op, f, core, tol)
            u, s, vt = self._split(op, f, y, tol)
            y_cut = contract(u * s, vt).reshape(y.shape)

            block = residual_block(a.cores[j], y_cut, state.nb.cores[j], j, d)
            left = contract(t_left, right_unfold(block)).reshape(-1, block.shape[2])
            residual = float(np.linalg.norm(contract(left, t_right[j + 1], trans_b=True)))
            recorder.record(residual / b_norm, state.x.ranks, sweep=half, site=state.site(j))
            logger.debug(f"{self.name} half-sweep {half} site {state.site(j)}: ||R||/||B|| = {residual / b_norm:.3e}")

            if residual <= target:
                state.x.cores[j] = y_cut
                for k in range(j, d - 1):
                    self._shift(state, k)
                return True

            r0, n, r1 = y.shape
            projected = np.concatenate((
                contract(state.env.left[j].reshape(r0, -1),
                         right_unfold(apply_op_core(a.cores[j], y_cut))).reshape(r0, n, -1),
                contract(state.env.rhs_left[j], right_unfold(state.nb.cores[j])).reshape(r0, n, -1),
            ), axis=2)
            p0 = contract(left_unfold(projected), t_right[j + 1], trans_b=True)
            self._advance(state, j, u, s, vt, enrichment_basis(u, p0, self.options.k_enrich))
            new_block = residual_block(a.cores[j], state.x.cores[j], state.nb.cores[j], j, d)
            t_left = self._left_factor(t_left, new_block)
        return False


def tt_amen_full(a: TTOperator, b: TensorTrain, x0: Optional[TensorTrain] = None, epsilon: float = 1e-8,
                 max_sweeps: int = 20, k_enrich: int = Config.DEFAULT_K_ENRICH,
                 options: Optional[AmenOptions] = None) -> Tuple[TensorTrain, SolveReport]:
    opts = options or AmenOptions(k_enrich=k_enrich)
    return TTAmenSolver(epsilon, max_sweeps, opts).solve(a, b, x0)


def tt_amen_simplified(a: TTOperator, b: TensorTrain, x0: Optional[TensorTrain] = None, epsilon: float = 1e-8,
                       max_sweeps: int = 20, k_enrich: int = Config.DEFAULT_K_ENRICH, eps_inner: float = 1e-2,
                       options: Optional[AmenOptions] = None) -> Tuple[TensorTrain, SolveReport]:
    opts = options or AmenOptions(k_enrich=k_enrich, inner_epsilon=eps_inner)
    return SimplifiedAmenSolver(epsilon, max_sweeps, opts).solve(a, b, x0)
