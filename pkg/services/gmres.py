"""TT-GMRES and TT-MINRES with truncated (inexact) Arnoldi steps.

All truncations of one Arnoldi step are relative to the vector being
truncated. The per-step tolerance ``delta_i`` grows as the residual shrinks,
so late basis vectors may be rounded more aggressively without spoiling the
final residual.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from ttsolve.config import Config
from ttsolve.core.dense import UNIT_ROUNDOFF
from ttsolve.core.errors import BreakdownError, ContractViolation
from ttsolve.core.fast import axpby_trunc_ortho, fast_orthogonalize, fast_truncate
from ttsolve.core.interfaces import ILinearSolver
from ttsolve.core.models import Backend, GmresConfig, OrthoScheme, ResidualBound, ToleranceRule
from ttsolve.core.report_models import SolveReport
from ttsolve.core.tensor_train import (
    LEFT,
    RIGHT,
    TensorTrain,
    TTOperator,
    tt_apply_op,
    tt_axpby_raw,
    tt_dot,
    tt_norm,
    tt_residual_norm,
    tt_scale,
    tt_truncate,
)
from ttsolve.services.preconditioner import PreconditionedSolver, RankOnePrecond
from ttsolve.services.recorder import RunRecorder
from ttsolve.utils.logger import setup_logger

logger = setup_logger()

BREAKDOWN_TOL = 1e-14
SIMGS_PASSES = 4


class BasisVector:
    """A Krylov basis vector kept in a left- and a right-orthogonal representation."""

    __slots__ = ("left", "right")

    def __init__(self, left: TensorTrain, right: Optional[TensorTrain] = None):
        self.left = left
        self.right = left if right is None else right

    @property
    def ranks(self) -> Tuple[int, ...]:
        return self.left.ranks


class StandardArithmetic:
    """Reference kernels: exact sums followed by Householder/SVD rounding."""

    name = Backend.STANDARD.value

    def truncate(self, x: TensorTrain, rel_tol: float) -> TensorTrain:
        return tt_truncate(x, rel_tol=rel_tol)

    def axpby(self, alpha: float, x: TensorTrain, beta: float, v: BasisVector, rel_tol: float) -> TensorTrain:
        return tt_truncate(tt_axpby_raw(alpha, x, beta, v.left), rel_tol=rel_tol)

    def dot(self, v: BasisVector, x: TensorTrain) -> float:
        return tt_dot(v.left, x)

    def norm(self, x: TensorTrain) -> float:
        return tt_norm(x)

    def basis_vector(self, w: TensorTrain, scale: float) -> BasisVector:
        return BasisVector(tt_scale(w, 1.0 / scale))


class FastArithmetic(StandardArithmetic):
    """Fast kernels; sums alternate between left- and right-orthogonal partners."""

    name = Backend.FAST.value

    def truncate(self, x: TensorTrain, rel_tol: float) -> TensorTrain:
        return fast_truncate(x, rel_tol=rel_tol)

    def axpby(self, alpha: float, x: TensorTrain, beta: float, v: BasisVector, rel_tol: float) -> TensorTrain:
        if x.is_left_orthogonal():
            partner = v.left
        elif x.is_right_orthogonal():
            partner = v.right
        else:
            x = fast_orthogonalize(x.copy(), LEFT)
            partner = v.left
        return axpby_trunc_ortho(alpha, x, beta, partner, rel_tol=rel_tol)

    def basis_vector(self, w: TensorTrain, scale: float) -> BasisVector:
        y = tt_scale(w, 1.0 / scale)
        if y.is_right_orthogonal() and not y.is_left_orthogonal():
            return BasisVector(fast_orthogonalize(y.copy(), LEFT), y)
        if not y.is_left_orthogonal():
            fast_orthogonalize(y, LEFT)
        return BasisVector(y, fast_orthogonalize(y.copy(), RIGHT))


def arithmetic_for(backend: Backend) -> StandardArithmetic:
    return FastArithmetic() if Backend(backend) == Backend.FAST else StandardArithmetic()


def _normalize(w: TensorTrain, initial_norm: float, h: np.ndarray, final_tol: float,
               arithmetic: StandardArithmetic) -> Tuple[np.ndarray, BasisVector]:
    w = arithmetic.truncate(w, final_tol)
    norm = arithmetic.norm(w)
    h[-1] = norm
    if norm <= BREAKDOWN_TOL * initial_norm:
        raise BreakdownError("new Krylov direction vanished", h, happy=True)
    return h, arithmetic.basis_vector(w, norm)


def _initial(w: TensorTrain, tol: float, size: int, arithmetic: StandardArithmetic) -> Tuple[TensorTrain, float]:
    w = arithmetic.truncate(w, tol)
    norm = arithmetic.norm(w)
    if norm == 0.0:
        raise BreakdownError("operator maps the basis vector to zero", np.zeros(size + 1), happy=False)
    return w, norm


def mgs(basis: Sequence[BasisVector], w: TensorTrain, delta: float, arithmetic: Optional[StandardArithmetic] = None,
        minres: bool = False, naive: bool = False) -> Tuple[np.ndarray, BasisVector]:
    """Modified Gram-Schmidt step with a truncation after every subtraction.

    With ``minres`` only the last two basis vectors are subtracted.

    Returns:
        (h, V_new) with ``W ~ sum_j h_j V_j + h[-1] V_new``

    Raises:
        BreakdownError: if the orthogonalized direction vanishes
    """
    arithmetic = arithmetic or FastArithmetic()
    i = len(basis)
    inner = delta if naive else 0.5 * delta / (i + 1)
    final = delta if naive else 0.5 * delta
    w, initial_norm = _initial(w, inner, i, arithmetic)
    h = np.zeros(i + 1)
    targets = range(max(0, i - 2), i) if minres else range(i)
    for j in targets:
        h[j] = arithmetic.dot(basis[j], w)
        w = arithmetic.axpby(1.0, w, -h[j], basis[j], inner)
    return _normalize(w, initial_norm, h, final, arithmetic)


def simgs(basis: Sequence[BasisVector], w: TensorTrain, delta: float, arithmetic: Optional[StandardArithmetic] = None,
          naive: bool = False) -> Tuple[np.ndarray, BasisVector]:
    """Selective iterated modified Gram-Schmidt.

    Each pass computes all normalized projections ``g_j = <V_j, W> / ||W||``
    (dot products are cheap compared to truncated sums) and subtracts only
    the directions with ``|g_j| > delta``, largest first. At most four
    passes are made.

    Returns:
        (h, V_new) as for ``mgs``
    """
    arithmetic = arithmetic or FastArithmetic()
    i = len(basis)
    inner = delta if naive else 0.5 * delta / (2 * i + 1)
    final = delta if naive else 0.5 * delta
    w, initial_norm = _initial(w, inner, i, arithmetic)
    h = np.zeros(i + 1)
    if i == 0:
        return _normalize(w, initial_norm, h, final, arithmetic)

    for _ in range(SIMGS_PASSES):
        norm = arithmetic.norm(w)
        if norm <= BREAKDOWN_TOL * initial_norm:
            h[-1] = norm
            raise BreakdownError("new Krylov direction vanished", h, happy=True)
        g = np.array([arithmetic.dot(v, w) for v in basis]) / norm
        if np.max(np.abs(g)) <= delta:
            break
        while True:
            # argmax picks the lowest index among ties
            j = int(np.argmax(np.abs(g)))
            if abs(g[j]) <= delta:
                break
            beta = arithmetic.dot(basis[j], w)
            w = arithmetic.axpby(1.0, w, -beta, basis[j], inner)
            h[j] += beta
            g[j] = 0.0
    return _normalize(w, initial_norm, h, final, arithmetic)


class ArnoldiCycle:
    """One (restart) cycle of inexact Arnoldi for ``A dX = R0``.

    Attributes:
        basis: Krylov basis vectors V_1 .. V_{k+1}
        hessenberg: (m+1) x m upper Hessenberg matrix, filled column by column
        deltas: truncation tolerance of every step
        gammas: least-squares residual norms, starting with gamma_0 = ||R0||
    """

    def __init__(self, a: TTOperator, r0: TensorTrain, gamma0: float, epsilon: float, length: int,
                 config: GmresConfig, arithmetic: StandardArithmetic):
        self.a = a
        self.epsilon = epsilon
        self.length = length
        self.config = config
        self.arithmetic = arithmetic
        self.basis: List[BasisVector] = [arithmetic.basis_vector(r0, gamma0)]
        self.hessenberg = np.zeros((length + 1, length))
        self.deltas: List[float] = []
        self.gammas: List[float] = [gamma0]
        self.y = np.zeros(0)
        self.steps = 0
        self.exhausted = False
        self.norm_estimate = 0.0

    @property
    def gamma0(self) -> float:
        return self.gammas[0]

    def delta(self, i: int) -> float:
        ratio = self.gamma0 / max(self.gammas[i - 1], UNIT_ROUNDOFF * self.gamma0)
        if self.config.tolerance_rule == ToleranceRule.NAIVE:
            return self.epsilon * ratio
        return 0.5 * self.epsilon / (self.config.cond_estimate * self.length) * ratio

    def step(self) -> float:
        """Extend the basis by one vector and return the new residual estimate gamma_i."""
        if self.exhausted or self.steps >= self.length:
            raise ContractViolation("Arnoldi cycle cannot be extended")
        i = self.steps + 1
        delta = self.delta(i)
        naive = self.config.tolerance_rule == ToleranceRule.NAIVE
        w = tt_apply_op(self.a, self.basis[-1].left)
        try:
            if self.config.ortho_scheme == OrthoScheme.SIMGS and not self.config.symmetric:
                h, v = simgs(self.basis, w, delta, self.arithmetic, naive=naive)
            else:
                h, v = mgs(self.basis, w, delta, self.arithmetic, minres=self.config.symmetric, naive=naive)
        except BreakdownError as err:
            h, v = err.coeffs.copy(), None
            h[-1] = 0.0
            self.exhausted = True
            logger.debug(f"Arnoldi breakdown at step {i} (happy={err.happy})")
            if not err.happy:
                self.gammas.append(self.gammas[-1])
                self.steps = i
                self.deltas.append(delta)
                self.y = np.zeros(i)
                return self.gammas[-1]

        self.hessenberg[: i + 1, i - 1] = h
        self.norm_estimate = max(self.norm_estimate, float(np.linalg.norm(h)))
        self.deltas.append(delta)
        self.steps = i
        if v is not None:
            self.basis.append(v)

        rhs = np.zeros(i + 1)
        rhs[0] = self.gamma0
        hess = self.hessenberg[: i + 1, :i]
        self.y = np.linalg.lstsq(hess, rhs, rcond=None)[0]
        gamma = float(np.linalg.norm(hess @ self.y - rhs))
        self.gammas.append(gamma)
        return gamma

    def converged(self) -> bool:
        gamma = self.gammas[-1]
        if self.config.residual_bound == ResidualBound.SHARP:
            slack = sum(d * self.norm_estimate * abs(y) for d, y in zip(self.deltas, self.y))
            return (gamma + slack) / self.gamma0 <= self.epsilon
        return gamma / self.gamma0 <= 0.5 * self.epsilon

    def assemble(self) -> TensorTrain:
        """``sum_j y_j V_j``, summed from the last term, each partial sum rounded."""
        k = len(self.y)
        if k == 0:
            raise ContractViolation("Nothing to assemble before the first Arnoldi step")
        tol = 0.5 * self.epsilon / (self.config.cond_estimate * k)
        x = tt_scale(self.basis[k - 1].left, self.y[k - 1])
        for j in range(k - 2, -1, -1):
            x = self.arithmetic.axpby(1.0, x, float(self.y[j]), self.basis[j], tol)
        return x


class TTGmresSolver(ILinearSolver):
    """Restartable TT-GMRES (TT-MINRES when ``config.symmetric``)."""

    def __init__(self, config: Optional[GmresConfig] = None, name: Optional[str] = None, quiet: bool = False):
        self.config = config or GmresConfig()
        self._info = logger.debug if quiet else logger.info
        self.arithmetic = arithmetic_for(self.config.backend)
        self.name = name or ("minres" if self.config.symmetric else "gmres")
        self.last_cycles: List[ArnoldiCycle] = []

    @property
    def epsilon(self) -> float:
        return self.config.epsilon

    def _residual(self, a: TTOperator, x: Optional[TensorTrain], b: TensorTrain, abs_tol: float) -> TensorTrain:
        if x is None:
            return b.copy()
        return tt_truncate(tt_axpby_raw(1.0, b, -1.0, tt_apply_op(a, x)), abs_tol)

    def solve(self, a: TTOperator, b: TensorTrain, x0: Optional[TensorTrain] = None) -> Tuple[TensorTrain, SolveReport]:
        cfg = self.config
        if a.col_dims != b.dims:
            raise ContractViolation(f"Operator {a.col_dims} and right-hand side {b.dims} do not match")
        if x0 is not None and x0.dims != b.dims:
            raise ContractViolation(f"Initial guess {x0.dims} and right-hand side {b.dims} do not match")
        b_norm = tt_norm(b)
        if b_norm == 0.0:
            raise ContractViolation("The right-hand side must not vanish")

        recorder = RunRecorder(self.name)
        target = cfg.epsilon * b_norm
        cycle_length = cfg.restart if cfg.restart > 0 else cfg.max_iters
        self._info(f"{self.name}: d={b.d}, eps={cfg.epsilon:g}, m={cfg.max_iters}, "
                    f"{cfg.ortho_scheme.value}, {self.arithmetic.name} backend")

        x = None if x0 is None else x0.copy()
        iterations = 0
        cycle_index = 0
        tightening = 1.0
        converged = False
        norm_estimate = 0.0
        true_residual = None
        self.last_cycles = []

        while iterations < cfg.max_iters:
            r0 = self._residual(a, x, b, Config.RESIDUAL_CHECK_FACTOR * target)
            gamma0 = tt_norm(r0)
            if gamma0 <= tightening * target * 0.5:
                true_residual = tt_residual_norm(a, x, b) if x is not None else b_norm
                if true_residual <= target:
                    converged = True
                    break
            cycle = ArnoldiCycle(a, r0, gamma0, tightening * target / gamma0,
                                 min(cycle_length, cfg.max_iters - iterations), cfg, self.arithmetic)
            self.last_cycles.append(cycle)
            while cycle.steps < cycle.length and not cycle.exhausted:
                gamma = cycle.step()
                iterations += 1
                newest = cycle.basis[-1]
                recorder.record(gamma / b_norm, newest.ranks, sweep=cycle_index)
                logger.debug(f"{self.name} step {iterations}: gamma/||B|| = {gamma / b_norm:.3e}, "
                             f"rank(V) = {max(newest.ranks)}")
                if cycle.converged():
                    break
            norm_estimate = max(norm_estimate, cycle.norm_estimate)

            dx = cycle.assemble()
            if x is None:
                x = dx
            else:
                rel = Config.RESIDUAL_CHECK_FACTOR * cfg.epsilon / cfg.cond_estimate
                x = tt_truncate(tt_axpby_raw(1.0, x, 1.0, dx), rel_tol=rel)

            if cycle.converged() or cycle.exhausted:
                true_residual = tt_residual_norm(a, x, b)
                recorder.trace[-1].true_residual = true_residual / b_norm
                if true_residual <= target:
                    converged = True
                    break
                message = (f"estimate converged at step {iterations} but the true relative residual is "
                           f"{true_residual / b_norm:.3e}")
                recorder.notice(message)
                logger.warning(f"{self.name}: {message}")
                tightening *= 0.5
                if cycle.exhausted and cycle.steps == 0:
                    break
            cycle_index += 1

        if x is None:
            x = TensorTrain([np.zeros((1, n, 1)) for n in b.dims])
        if true_residual is None:
            true_residual = tt_residual_norm(a, x, b)
        final = true_residual / b_norm
        if converged:
            self._info(f"{self.name} converged after {iterations} steps, residual {final:.3e}")
        else:
            self._info(f"{self.name}: not converged in {cfg.max_iters} steps (residual {final:.3e})")
        report = recorder.finish(x, converged, final, iterations=iterations, sweeps=cycle_index + 1,
                                 norm_estimate=norm_estimate)
        return x, report


def tt_gmres(a: TTOperator, b: TensorTrain, config: Optional[GmresConfig] = None,
             precond: Optional[RankOnePrecond] = None,
             x0: Optional[TensorTrain] = None) -> Tuple[TensorTrain, SolveReport]:
    """Solve ``A X = B`` with TT-GMRES, optionally with a ``RankOnePrecond``."""
    solver: ILinearSolver = TTGmresSolver(config)
    if precond is not None:
        solver = PreconditionedSolver(solver, precond)
    return solver.solve(a, b, x0)
