"""Optimized tensor-train building blocks.

These routines produce the same results as their reference counterparts in
``tensor_train`` (within the requested tolerances) while doing less work:

* ``axpby_trunc_ortho`` adds two orthogonal trains and only factorizes the
  part of each unfolding that is new with respect to the larger train;
* ``fast_orthogonalize`` and ``fast_truncate`` compute triangular factors with
  a Q-less TSQR and apply their inverses with triangular solves;
* ``prepare_local_op``/``local_apply`` reorder the projected operator of a
  MALS/AMEn site so every step is one large matrix product.

Whenever a fast step cannot be trusted it is redone with Householder QR or
a direct SVD, and the event is tallied in ``FALLBACKS``.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import opt_einsum as oe

from ttsolve.config import Config
from ttsolve.core.dense import (
    UNIT_ROUNDOFF,
    Matrix,
    as_array,
    cholesky_spd,
    contract,
    contract_batched,
    householder_qr,
    qless_tsqr,
    triangular_solve,
    truncated_svd,
)
from ttsolve.core.errors import ContractViolation
from ttsolve.core.tensor_train import (
    LEFT,
    RIGHT,
    TensorTrain,
    left_unfold,
    right_unfold,
    svd_sweep,
    tt_reverse,
)
from ttsolve.utils.logger import setup_logger

logger = setup_logger()


class FallbackCounter:
    """Tally of fast-path steps that had to be redone with a standard kernel."""

    KINDS = ("ortho", "truncate", "svd")

    def __init__(self):
        self._tally: Dict[str, int] = {kind: 0 for kind in self.KINDS}

    def add(self, kind: str) -> None:
        if kind not in self._tally:
            raise ContractViolation(f"Unknown fallback kind '{kind}'")
        self._tally[kind] += 1

    def by_kind(self) -> Dict[str, int]:
        return dict(self._tally)

    def snapshot(self) -> Dict[str, int]:
        return dict(self._tally)

    def since(self, snapshot: Dict[str, int]) -> Dict[str, int]:
        return {kind: value - snapshot.get(kind, 0) for kind, value in self._tally.items()}


FALLBACKS = FallbackCounter()

# directions below this fraction of the block norm are treated as null
_NULL_DIRECTION_TOL = 1e-14


def _tsqr_factor_is_usable(r: np.ndarray, ratio_guard: bool) -> bool:
    diag = np.abs(np.diag(r))
    scale = float(np.linalg.norm(r))
    if diag.size == 0 or diag.min() <= Config.SINGULAR_DIAG_TOL * scale:
        return False
    if ratio_guard and diag.min() < Config.FAST_ORTHO_MIN_DIAG_RATIO * diag.max():
        return False
    return True


def _fast_qr(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Q and R of an unfolding through the Q-less TSQR plus a triangular solve."""
    rows, cols = m.shape
    if rows < cols:
        return householder_qr(m)
    r = qless_tsqr(m)
    if not _tsqr_factor_is_usable(r, ratio_guard=True):
        FALLBACKS.add("ortho")
        logger.debug(f"fast_orthogonalize: TSQR factor of a {rows}x{cols} unfolding is ill-conditioned, using Householder")
        return householder_qr(m)
    q = triangular_solve(r, m.T, trans=True).T
    return q, r


def fast_orthogonalize(x: TensorTrain, direction: str = LEFT, stop_index: Optional[int] = None) -> TensorTrain:
    """In-place orthogonalization sweep that never forms Householder reflectors.

    Same contract as ``tensor_train.orthogonalize``. Each step factors the
    unfolding with ``qless_tsqr``, obtains the orthogonal core as ``X_j R^-1``
    and pushes R into the neighbour. Steps whose triangular factor is singular
    or badly scaled fall back to Householder QR. The train is flagged
    ``fast_orthogonalized`` afterwards.
    """
    d = x.d
    if direction == RIGHT:
        stop = 1 if stop_index is None else stop_index
        if not 1 <= stop <= d:
            raise ContractViolation(f"stop_index {stop} out of range for d={d}")
        mirrored = tt_reverse(x)
        fast_orthogonalize(mirrored, LEFT, d - stop)
        restored = tt_reverse(mirrored)
        x.cores = restored.cores
        x.mark(restored.left_ortho, restored.right_ortho)
        x.fast_orthogonalized = restored.fast_orthogonalized
        return x
    if direction != LEFT:
        raise ContractViolation(f"Unknown direction '{direction}'")

    stop = d - 1 if stop_index is None else stop_index
    if not 0 <= stop <= d - 1:
        raise ContractViolation(f"stop_index {stop} out of range for d={d}")
    for k in range(x.left_ortho, stop):
        core, nxt = x.cores[k], x.cores[k + 1]
        q, r = _fast_qr(left_unfold(core))
        x.cores[k] = q.reshape(core.shape[0], core.shape[1], q.shape[1])
        x.cores[k + 1] = contract(r, right_unfold(nxt)).reshape(r.shape[0], nxt.shape[1], nxt.shape[2])
    if stop > x.left_ortho:
        x.mark(stop, min(x.right_ortho, d - 1 - stop))
        x.fast_orthogonalized = True
    return x


def _small_factor_svd(c: np.ndarray, step_tol: float, max_rank: Optional[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated SVD of a right unfolding C = U S W^T, returning (U, S, W^T).

    For ``C`` with at least as many columns as rows only the triangular factor
    of ``C^T`` is decomposed and ``W^T = S^-1 U^T C`` is recovered by a
    product.
    """
    rows, cols = c.shape
    if cols < rows:
        u, s, v = truncated_svd(c, step_tol, max_rank)
        return u, s, v.T
    l_factor = qless_tsqr(c.T)
    u, s, _ = truncated_svd(l_factor.T, step_tol, max_rank)
    if s.min() <= 0.0 or s.max() > s.min() / math.sqrt(UNIT_ROUNDOFF):
        FALLBACKS.add("svd")
        logger.debug("fast_truncate: kept singular values span too many magnitudes, using a direct SVD")
        u, s, v = truncated_svd(c, step_tol, max_rank)
        return u, s, v.T
    return u, s, contract(u / s, c, trans_a=True)


def _householder_prefix(cores: List[np.ndarray]) -> List[np.ndarray]:
    """Left-orthogonalize a short chain with Householder QR; the last core takes the norm."""
    chain = [core.copy() for core in cores]
    for k in range(len(chain) - 1):
        core, nxt = chain[k], chain[k + 1]
        q, r = householder_qr(left_unfold(core))
        chain[k] = q.reshape(core.shape[0], core.shape[1], q.shape[1])
        chain[k + 1] = contract(r, right_unfold(nxt)).reshape(r.shape[0], nxt.shape[1], nxt.shape[2])
    return chain


def fast_truncate(x: TensorTrain, abs_tol: float = 0.0, max_rank: Optional[int] = None,
                  rel_tol: float = 0.0) -> TensorTrain:
    """Rounding with Q-less TSQR factors and an a-posteriori orthogonality test.

    Left-to-right, every unfolding ``M_j`` is only reduced to its triangular
    factor ``R_j``; the orthogonal factor stays implicit as ``M_j R_j^-1``.
    Right-to-left, each step decomposes the small factor of the right
    unfolding and updates the neighbour as ``M_j R_j^-1 U S`` through a
    triangular solve. The Gram matrix of the updated neighbour must then
    match ``S^2``; if it does not, the prefix is re-orthogonalized from the
    original cores with Householder QR and the step is recomputed.

    Args:
        x: Train to round (left untouched)
        abs_tol: Absolute Frobenius-norm error bound
        max_rank: Optional cap on every bond rank
        rel_tol: Additional tolerance relative to ``||x||``

    Returns:
        A new right-orthogonal train within ``abs_tol + rel_tol * ||x||`` of x
    """
    if abs_tol < 0 or rel_tol < 0:
        raise ContractViolation("Truncation tolerances must be nonnegative")
    y = x.copy()
    d = y.d
    if d == 1:
        return y
    start = min(y.left_ortho, d - 1)

    # None marks an explicit (stored) orthogonal core
    factors: List[Optional[np.ndarray]] = [None] * d
    for k in range(start, d - 1):
        core, nxt = y.cores[k], y.cores[k + 1]
        m = left_unfold(core)
        rows, cols = m.shape
        r = qless_tsqr(m) if rows >= cols else None
        if r is not None and _tsqr_factor_is_usable(r, ratio_guard=False):
            factors[k] = r
        else:
            q, r = householder_qr(m)
            y.cores[k] = q.reshape(core.shape[0], core.shape[1], q.shape[1])
        y.cores[k + 1] = contract(r, right_unfold(nxt)).reshape(r.shape[0], nxt.shape[1], nxt.shape[2])

    norm = float(np.linalg.norm(y.cores[-1]))
    step_tol = (abs_tol + rel_tol * norm) / math.sqrt(d - 1)
    check_tol = Config.APOSTERIORI_FACTOR * max(step_tol, UNIT_ROUNDOFF * norm) * norm

    # transforms[k] maps the original core k onto its current right bond
    transforms: List[Optional[np.ndarray]] = [None] * d
    transforms[d - 1] = np.eye(1)
    for k in range(d - 1, 0, -1):
        core, prev = y.cores[k], y.cores[k - 1]
        u, s, wt = _small_factor_svd(right_unfold(core), step_tol, max_rank)
        factor = factors[k - 1]
        if factor is None:
            us = u * s
            y.cores[k] = wt.reshape(wt.shape[0], core.shape[1], core.shape[2])
            y.cores[k - 1] = contract(left_unfold(prev), us).reshape(prev.shape[0], prev.shape[1], us.shape[1])
            transforms[k - 1] = None
            continue

        z = triangular_solve(factor, u * s)
        neighbour = contract(left_unfold(prev), z)
        gram = contract(neighbour, neighbour, trans_a=True)
        if np.max(np.abs(gram - np.diag(s**2))) <= check_tol:
            y.cores[k] = wt.reshape(wt.shape[0], core.shape[1], core.shape[2])
            y.cores[k - 1] = neighbour.reshape(prev.shape[0], prev.shape[1], z.shape[1])
            transforms[k - 1] = z
            continue

        FALLBACKS.add("truncate")
        logger.debug(f"fast_truncate: a-posteriori check failed at core {k}, recomputing with Householder QR")
        if transforms[k] is not None:
            original = x.cores[k]
            exact = contract(left_unfold(original), transforms[k])
            exact = exact.reshape(original.shape[0], original.shape[1], transforms[k].shape[1])
        else:
            exact = triangular_solve(factor, right_unfold(core)).reshape(factor.shape[1], core.shape[1], core.shape[2])
        chain = _householder_prefix([x.cores[i] for i in range(start, k)] + [exact])
        last = chain[-1]
        u, s, v = truncated_svd(right_unfold(last), step_tol, max_rank)
        y.cores[k] = v.T.reshape(v.shape[1], last.shape[1], last.shape[2])
        q_prev = chain[-2]
        us = u * s
        y.cores[k - 1] = contract(left_unfold(q_prev), us).reshape(q_prev.shape[0], q_prev.shape[1], us.shape[1])
        for i in range(start, k - 1):
            y.cores[i] = chain[i - start]
        for i in range(start, k):
            factors[i] = None
        transforms[k - 1] = None

    y.mark(0, d - 1)
    y.fast_orthogonalized = False
    return y


def stable_orthogonal_complement(q: Union[np.ndarray, Matrix], v: Union[np.ndarray, Matrix],
                                 return_coeffs: bool = False):
    """Project V onto the orthogonal complement of an inexactly orthogonal Q.

    Uses the Gram matrix ``G = Q^T Q = L L^T`` so that
    ``V' = V - Q (L L^T)^-1 Q^T V`` is orthogonal to range(Q) even when the
    columns of Q have lost orthogonality.

    Returns:
        V', or (V', T) with ``V = Q T + V'`` when ``return_coeffs`` is set
    """
    qm = as_array(q)
    vm = as_array(v)
    if qm.shape[0] != vm.shape[0]:
        raise ContractViolation(f"Row mismatch: {qm.shape} and {vm.shape}")
    gram = contract(qm, qm, trans_a=True)
    factor = cholesky_spd(gram)
    coeffs = contract(qm, vm, trans_a=True)
    coeffs = triangular_solve(factor, coeffs, lower=True, kind="cholesky")
    coeffs = triangular_solve(factor, coeffs, lower=True, trans=True, kind="cholesky")
    projected = vm - contract(qm, coeffs)
    if return_coeffs:
        return projected, coeffs
    return projected


def _complement_basis(p: np.ndarray, capacity: int, scale: float) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis Q and coefficients R with P = Q R, at most ``capacity`` columns."""
    rows, cols = p.shape
    null_tol = _NULL_DIRECTION_TOL * max(scale, 1.0)
    if capacity <= 0 or not np.any(p):
        return np.zeros((rows, 0)), np.zeros((0, cols))
    if cols <= capacity:
        q, r = householder_qr(p)
        if np.min(np.abs(np.diag(r))) > null_tol:
            return q, r
    u, s, v = truncated_svd(p, 0.0, capacity)
    keep = int(np.count_nonzero(s > null_tol))
    return u[:, :keep], s[:keep, None] * v[:, :keep].T


def axpby_trunc_ortho(alpha: float, x: TensorTrain, beta: float, y: TensorTrain, abs_tol: float = 0.0,
                      max_rank: Optional[int] = None, rel_tol: float = 0.0) -> TensorTrain:
    """Truncated alpha*x + beta*y for two left-orthogonal (or two right-orthogonal) trains.

    The block unfolding of the sum is left-orthogonalized by projecting only
    the columns coming from the smaller train against the orthonormal
    columns of the larger one; a closing SVD sweep truncates the result.

    Returns:
        A right-orthogonal train for left-orthogonal inputs, a
        left-orthogonal one for right-orthogonal inputs
    """
    if x.dims != y.dims:
        raise ContractViolation(f"Dimension mismatch: {x.dims} vs {y.dims}")
    if abs_tol < 0 or rel_tol < 0:
        raise ContractViolation("Truncation tolerances must be nonnegative")
    d = x.d
    if d == 1:
        return TensorTrain([alpha * x.cores[0] + beta * y.cores[0]])
    if not (x.is_left_orthogonal() and y.is_left_orthogonal()):
        if x.is_right_orthogonal() and y.is_right_orthogonal():
            mirrored = axpby_trunc_ortho(alpha, tt_reverse(x), beta, tt_reverse(y), abs_tol, max_rank, rel_tol)
            return tt_reverse(mirrored)
        raise ContractViolation("axpby_trunc_ortho needs two left-orthogonal or two right-orthogonal trains")
    if sum(y.ranks) > sum(x.ranks):
        x, y, alpha, beta = y, x, beta, alpha

    cores: List[np.ndarray] = []
    y_bar = y.cores[0]
    for j in range(d - 1):
        xj = x.cores[j]
        rx0, n, rx1 = xj.shape
        rows_total = y_bar.shape[0]
        y_left = left_unfold(y_bar)
        x_left = left_unfold(xj)
        top = left_unfold(y_bar[:rx0])

        if x.fast_orthogonalized:
            padded = np.zeros((rows_total, n, rx1))
            padded[:rx0] = xj
            p, coeffs = stable_orthogonal_complement(left_unfold(padded), y_left, return_coeffs=True)
        else:
            coeffs = contract(x_left, top, trans_a=True)
            p = y_left.copy()
            p[: rx0 * n] -= contract(x_left, coeffs)
            # second pass restores orthogonality lost to cancellation
            again = contract(x_left, p[: rx0 * n], trans_a=True)
            p[: rx0 * n] -= contract(x_left, again)
            coeffs = coeffs + again

        q, r = _complement_basis(p, rows_total * n - rx1, float(np.linalg.norm(y_left)))
        new_core = np.zeros((rows_total, n, rx1 + q.shape[1]))
        new_core[:rx0, :, :rx1] = xj
        new_core[:, :, rx1:] = q.reshape(rows_total, n, q.shape[1])
        cores.append(new_core)

        carry = np.vstack((coeffs, r))
        nxt = y.cores[j + 1]
        y_bar = contract(carry, right_unfold(nxt)).reshape(carry.shape[0], nxt.shape[1], nxt.shape[2])

    x_last = x.cores[d - 1]
    rx0 = x_last.shape[0]
    last = beta * y_bar
    last[:rx0] += alpha * x_last
    cores.append(last)

    z = TensorTrain(cores, left_ortho=d - 1)
    tol = abs_tol + rel_tol * float(np.linalg.norm(last))
    return svd_sweep(z, tol, max_rank)


# --- projected local operators -------------------------------------------------------------


def merge_operator_cores(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Fuse two neighbouring operator cores into one super-core of size n_j * n_{j+1}."""
    a0, n0, m0, _ = first.shape
    _, n1, m1, a2 = second.shape
    merged = oe.contract("aijb,bklc->aikjlc", first, second)
    return merged.reshape(a0, n0 * n1, m0 * m1, a2)


def merge_train_cores(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    r0, n0, _ = first.shape
    _, n1, r2 = second.shape
    return oe.contract("aib,bjc->aijc", first, second).reshape(r0, n0 * n1, r2)


def _maybe_padded(array: np.ndarray, fused_dims: Sequence[int]) -> Matrix:
    return Matrix.from_array(array, pad=max(fused_dims) >= Config.PAD_THRESHOLD)


class LocalOp:
    """Projected operator of one site (or two merged sites) in contraction-friendly layout.

    Stores
        a1: left environment as r0 x (r0 * a0), test index first
        a2: operator core as (a0 * n) x (n * a1)
        a3: right environment as r1 x (a1 * r1), trial index first
    """

    def __init__(self, left_env: np.ndarray, op_core: np.ndarray, right_env: np.ndarray):
        r0, a0, r0b = left_env.shape
        b0, n, m, a1 = op_core.shape
        r1, b1, r1b = right_env.shape
        if r0 != r0b or r1 != r1b:
            raise ContractViolation("Environments must be square in the train ranks")
        if a0 != b0 or a1 != b1:
            raise ContractViolation(
                f"Operator ranks ({b0}, {b1}) do not match environments ({a0}, {a1})"
            )
        if n != m:
            raise ContractViolation("Local operators must be square")
        self.shape = (r0, n, r1)
        self.op_ranks = (a0, a1)
        self._left_env = left_env
        self._op_core = op_core
        self._right_env = right_env
        self.a1 = _maybe_padded(left_env.transpose(0, 2, 1).reshape(r0, r0 * a0), (r0, r0 * a0))
        self.a2 = _maybe_padded(op_core.reshape(a0 * n, n * a1), (a0 * n, n * a1))
        self.a3 = _maybe_padded(right_env.transpose(2, 1, 0).reshape(r1, a1 * r1), (r1, a1 * r1))

    @property
    def size(self) -> int:
        r0, n, r1 = self.shape
        return r0 * n * r1

    def flops(self) -> int:
        r0, n, r1 = self.shape
        a0, a1 = self.op_ranks
        return 2 * (r0 * n * r1 * a1 * r1 + r0 * a0 * n * n * a1 * r1 + r0 * r0 * a0 * n * r1)

    def to_dense(self) -> np.ndarray:
        """Projected operator as a dense (r0 n r1) x (r0 n r1) matrix (uncounted oracle)."""
        dense = oe.contract("paq,aijb,sbt->pisqjt", self._left_env, self._op_core, self._right_env)
        return dense.reshape(self.size, self.size)


def prepare_local_op(left_env: np.ndarray, op_cores: Union[np.ndarray, Sequence[np.ndarray]],
                     right_env: np.ndarray) -> LocalOp:
    """Precontract the layout of a site's projected operator.

    ``op_cores`` is a single operator core, or two neighbouring cores that are
    merged into one two-site core.
    """
    if isinstance(op_cores, np.ndarray):
        core = op_cores
    else:
        cores = list(op_cores)
        if len(cores) == 1:
            core = cores[0]
        elif len(cores) == 2:
            core = merge_operator_cores(cores[0], cores[1])
        else:
            raise ContractViolation("prepare_local_op takes one or two operator cores")
    return LocalOp(np.asarray(left_env, dtype=np.float64), np.asarray(core, dtype=np.float64),
                   np.asarray(right_env, dtype=np.float64))


def local_apply(op: LocalOp, y: np.ndarray) -> np.ndarray:
    """Apply a projected operator to a dense site tensor of shape (r0, n, r1)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != op.shape:
        raise ContractViolation(f"Site tensor of shape {y.shape} does not match local operator {op.shape}")
    r0, n, r1 = op.shape
    a0, a1 = op.op_ranks
    step = contract(y.reshape(r0 * n, r1), op.a3).reshape(r0, n * a1, r1)
    step = contract_batched(op.a2, step).reshape(r0 * a0, n * r1)
    return contract(op.a1, step).reshape(r0, n, r1)


def local_rhs(left_env: np.ndarray, rhs_cores: Union[np.ndarray, Sequence[np.ndarray]],
              right_env: np.ndarray) -> np.ndarray:
    """Projection of the right-hand side onto one site (or two merged sites)."""
    if isinstance(rhs_cores, np.ndarray):
        core = rhs_cores
    else:
        cores = list(rhs_cores)
        core = cores[0] if len(cores) == 1 else merge_train_cores(cores[0], cores[1])
    g0, n, g1 = core.shape
    r0 = left_env.shape[0]
    r1 = right_env.shape[0]
    if left_env.shape[1] != g0 or right_env.shape[1] != g1:
        raise ContractViolation("Right-hand side environments do not match the core ranks")
    half = contract(left_env, core.reshape(g0, n * g1)).reshape(r0 * n, g1)
    return contract(half, right_env, trans_b=True).reshape(r0, n, r1)
