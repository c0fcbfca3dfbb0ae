"""Tensor-train vectors and operators with reference (unoptimized) arithmetic.

Conventions used throughout the package:

* a vector core has shape ``(r_prev, n, r_next)`` in C order, so its left
  unfolding is ``core.reshape(r_prev * n, r_next)`` and its right unfolding
  is ``core.reshape(r_prev, n * r_next)``;
* an operator core has shape ``(ra_prev, n_row, n_col, ra_next)``;
* the dense form of a train is ordered like ``np.ravel`` (last mode fastest).

Orthogonality is tracked with two counters: ``left_ortho`` cores from the
start are left-orthogonal and ``right_ortho`` cores from the end are
right-orthogonal.
"""

import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import opt_einsum as oe

from ttsolve.config import Config
from ttsolve.core.dense import Matrix, contract, householder_qr, truncated_svd
from ttsolve.core.errors import ContractViolation, OracleTooLargeError
from ttsolve.utils.logger import setup_logger

logger = setup_logger()

LEFT = "left"
RIGHT = "right"


class TensorTrain:
    """A d-dimensional tensor stored as a chain of order-3 cores."""

    def __init__(self, cores: Sequence[np.ndarray], left_ortho: int = 0, right_ortho: int = 0,
                 fast_orthogonalized: bool = False):
        self.cores: List[np.ndarray] = [np.asarray(core, dtype=np.float64) for core in cores]
        self.left_ortho = left_ortho
        self.right_ortho = right_ortho
        self.fast_orthogonalized = fast_orthogonalized
        self._validate()

    def _validate(self) -> None:
        if not self.cores:
            raise ContractViolation("A tensor train needs at least one core")
        for k, core in enumerate(self.cores):
            if core.ndim != 3:
                raise ContractViolation(f"Core {k} must be order 3, got shape {core.shape}")
            if min(core.shape) < 1:
                raise ContractViolation(f"Core {k} has an empty dimension: {core.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ContractViolation("Boundary ranks must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise ContractViolation(
                    f"Rank mismatch between cores {k} and {k + 1}: "
                    f"{self.cores[k].shape[2]} != {self.cores[k + 1].shape[0]}"
                )
        if self.left_ortho < 0 or self.right_ortho < 0 or self.left_ortho + self.right_ortho > self.d - 1:
            raise ContractViolation("Orthogonality markers overlap or are negative")

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(core.shape[1] for core in self.cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return (1,) + tuple(core.shape[2] for core in self.cores)

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    def is_left_orthogonal(self, upto: Optional[int] = None) -> bool:
        return self.left_ortho >= (self.d - 1 if upto is None else upto)

    def is_right_orthogonal(self, start: int = 1) -> bool:
        return self.right_ortho >= self.d - start

    def mark(self, left: int = 0, right: int = 0) -> None:
        self.left_ortho = left
        self.right_ortho = right

    def copy(self) -> "TensorTrain":
        return TensorTrain([core.copy() for core in self.cores], self.left_ortho, self.right_ortho,
                           self.fast_orthogonalized)

    def __repr__(self) -> str:
        return f"TensorTrain(dims={self.dims}, ranks={self.ranks}, left_ortho={self.left_ortho}, right_ortho={self.right_ortho})"


class TTOperator:
    """A linear map in TT format with one order-4 core per mode."""

    def __init__(self, cores: Sequence[np.ndarray], symmetric: bool = False):
        self.cores: List[np.ndarray] = [np.asarray(core, dtype=np.float64) for core in cores]
        self.symmetric = symmetric
        self._validate()

    def _validate(self) -> None:
        if not self.cores:
            raise ContractViolation("An operator needs at least one core")
        for k, core in enumerate(self.cores):
            if core.ndim != 4:
                raise ContractViolation(f"Operator core {k} must be order 4, got shape {core.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[3] != 1:
            raise ContractViolation("Operator boundary ranks must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[3] != self.cores[k + 1].shape[0]:
                raise ContractViolation(f"Operator rank mismatch between cores {k} and {k + 1}")
        if self.row_dims != self.col_dims:
            raise ContractViolation("Only square operators are supported")

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def row_dims(self) -> Tuple[int, ...]:
        return tuple(core.shape[1] for core in self.cores)

    @property
    def col_dims(self) -> Tuple[int, ...]:
        return tuple(core.shape[2] for core in self.cores)

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.row_dims

    @property
    def ranks(self) -> Tuple[int, ...]:
        return (1,) + tuple(core.shape[3] for core in self.cores)

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @classmethod
    def identity(cls, dims: Sequence[int]) -> "TTOperator":
        return cls([np.eye(n).reshape(1, n, n, 1) for n in dims], symmetric=True)

    def transpose(self) -> "TTOperator":
        return TTOperator([core.transpose(0, 2, 1, 3).copy() for core in self.cores], self.symmetric)

    def as_train(self) -> TensorTrain:
        """View as a train whose k-th mode fuses (row, col) indices."""
        return TensorTrain([core.reshape(core.shape[0], core.shape[1] * core.shape[2], core.shape[3])
                            for core in self.cores])

    @classmethod
    def from_train(cls, train: TensorTrain, row_dims: Sequence[int], col_dims: Sequence[int],
                   symmetric: bool = False) -> "TTOperator":
        cores = [core.reshape(core.shape[0], n, m, core.shape[2])
                 for core, n, m in zip(train.cores, row_dims, col_dims)]
        return cls(cores, symmetric)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        """Core-wise symmetry check: every core equals its row/col transpose."""
        for core in self.cores:
            scale = max(1.0, float(np.max(np.abs(core))))
            if np.max(np.abs(core - core.transpose(0, 2, 1, 3))) > tol * scale:
                return False
        return True

    def copy(self) -> "TTOperator":
        return TTOperator([core.copy() for core in self.cores], self.symmetric)

    def __repr__(self) -> str:
        return f"TTOperator(dims={self.row_dims}, ranks={self.ranks}, symmetric={self.symmetric})"


# --- unfoldings -------------------------------------------------------------

def left_unfold(core: np.ndarray) -> np.ndarray:
    return core.reshape(core.shape[0] * core.shape[1], core.shape[2])


def right_unfold(core: np.ndarray) -> np.ndarray:
    return core.reshape(core.shape[0], core.shape[1] * core.shape[2])


def unfold(core: np.ndarray, side: str = LEFT, pad: bool = False) -> Matrix:
    """Copy a core's left or right unfolding into a column-major Matrix."""
    flat = left_unfold(core) if side == LEFT else right_unfold(core)
    return Matrix.from_array(flat, pad=pad)


def fold(matrix: Matrix, shape: Tuple[int, int, int]) -> np.ndarray:
    """Inverse of ``unfold`` for either side (both share the C-order layout)."""
    return np.ascontiguousarray(matrix.view()).reshape(shape)


# --- construction -------------------------------------------------------------

def tt_rank1(vectors: Sequence[Iterable[float]]) -> TensorTrain:
    """Generalized dyadic product of d vectors."""
    if len(vectors) == 0:
        raise ContractViolation("tt_rank1 needs at least one vector")
    cores = []
    for k, vector in enumerate(vectors):
        v = np.asarray(vector, dtype=np.float64).ravel()
        if v.size == 0:
            raise ContractViolation(f"Vector {k} is empty")
        cores.append(v.reshape(1, -1, 1))
    return TensorTrain(cores)


def feasible_ranks(dims: Sequence[int], ranks: Sequence[int]) -> Tuple[Tuple[int, ...], List[str]]:
    """Clamp a requested rank chain to the unfolding rank bounds.

    Returns:
        The clamped chain and a list of human-readable notices, one per clamp
    """
    dims = [int(n) for n in dims]
    ranks = [int(r) for r in ranks]
    d = len(dims)
    if d == 0 or any(n < 1 for n in dims):
        raise ContractViolation(f"Invalid mode sizes {dims}")
    if len(ranks) != d + 1:
        raise ContractViolation(f"Expected {d + 1} ranks for {d} modes, got {len(ranks)}")
    if ranks[0] != 1 or ranks[-1] != 1:
        raise ContractViolation("Boundary ranks must be 1")
    if any(r < 1 for r in ranks):
        raise ContractViolation("Ranks must be positive")

    notices = []
    clamped = list(ranks)
    for k in range(1, d):
        bound = min(math.prod(dims[:k]), math.prod(dims[k:]))
        if clamped[k] > bound:
            notices.append(f"rank r{k}={clamped[k]} clamped to {bound}")
            clamped[k] = bound
    return tuple(clamped), notices


def tt_random(dims: Sequence[int], ranks: Sequence[int], seed: int = 0,
              notices: Optional[List[str]] = None) -> TensorTrain:
    """Train with standard-normal cores from a seeded generator."""
    chain, clamps = feasible_ranks(dims, ranks)
    for message in clamps:
        logger.warning(f"tt_random: {message}")
    if notices is not None:
        notices.extend(clamps)
    rng = np.random.default_rng(seed)
    cores = [rng.standard_normal((chain[k], n, chain[k + 1])) for k, n in enumerate(dims)]
    return TensorTrain(cores)


# --- dense oracles (uncounted) --------------------------------------------------

def tt_to_full(x: TensorTrain) -> np.ndarray:
    """Dense tensor of shape ``x.dims``; guarded by ORACLE_MAX_ENTRIES."""
    size = math.prod(x.dims)
    if size > Config.ORACLE_MAX_ENTRIES:
        raise OracleTooLargeError(f"Dense tensor would have {size} entries")
    full = np.ones((1, 1))
    for core in x.cores:
        r0, n, r1 = core.shape
        full = (full @ core.reshape(r0, n * r1)).reshape(-1, r1)
    return full.reshape(x.dims)


def op_to_full(a: TTOperator) -> np.ndarray:
    """Dense matrix of shape (prod rows, prod cols); guarded like ``tt_to_full``."""
    rows = math.prod(a.row_dims)
    cols = math.prod(a.col_dims)
    if rows * cols > Config.ORACLE_MAX_ENTRIES:
        raise OracleTooLargeError(f"Dense operator would have {rows * cols} entries")
    full = np.ones((1, 1, 1))
    for core in a.cores:
        n_rows, n_cols, r_next = full.shape[0] * core.shape[1], full.shape[1] * core.shape[2], core.shape[3]
        full = oe.contract("NMr,rnms->NnMms", full, core).reshape(n_rows, n_cols, r_next)
    return full.reshape(rows, cols)


# --- arithmetic -----------------------------------------------------------------

def _check_same_dims(x: TensorTrain, y: TensorTrain) -> None:
    if x.dims != y.dims:
        raise ContractViolation(f"Dimension mismatch: {x.dims} vs {y.dims}")


def tt_dot(x: TensorTrain, y: TensorTrain) -> float:
    """Inner product by a left-to-right boundary contraction."""
    _check_same_dims(x, y)
    env = np.ones((1, 1))
    for cx, cy in zip(x.cores, y.cores):
        rx0, n, rx1 = cx.shape
        ry0, _, ry1 = cy.shape
        half = contract(env, right_unfold(cy)).reshape(rx0 * n, ry1)
        env = contract(left_unfold(cx), half, trans_a=True)
    return float(env[0, 0])


def tt_norm(x: TensorTrain) -> float:
    """Frobenius norm read off the center core of an orthogonalized copy."""
    if x.left_ortho + x.right_ortho == x.d - 1:
        return float(np.linalg.norm(x.cores[x.left_ortho]))
    work = x.copy()
    orthogonalize(work, LEFT)
    return float(np.linalg.norm(work.cores[-1]))


def tt_scale(x: TensorTrain, alpha: float) -> TensorTrain:
    """alpha * x, scaling a non-orthogonal core so the markers stay valid."""
    y = x.copy()
    y.cores[y.left_ortho] = y.cores[y.left_ortho] * alpha
    return y


def tt_reverse(x: TensorTrain) -> TensorTrain:
    """Mirror the mode order; left and right orthogonality swap."""
    cores = [core.transpose(2, 1, 0).copy() for core in reversed(x.cores)]
    return TensorTrain(cores, x.right_ortho, x.left_ortho, x.fast_orthogonalized)


def op_reverse(a: TTOperator) -> TTOperator:
    """Operator acting on mode-reversed trains: ``op_reverse(A) @ tt_reverse(x) = tt_reverse(A @ x)``."""
    return TTOperator([core.transpose(3, 1, 2, 0).copy() for core in reversed(a.cores)], a.symmetric)


def tt_axpby_raw(alpha: float, x: TensorTrain, beta: float, y: TensorTrain) -> TensorTrain:
    """Exact alpha*x + beta*y by block concatenation of the cores (ranks add)."""
    _check_same_dims(x, y)
    if x.d == 1:
        return TensorTrain([alpha * x.cores[0] + beta * y.cores[0]])

    cores = []
    for k, (cx, cy) in enumerate(zip(x.cores, y.cores)):
        rx0, n, rx1 = cx.shape
        ry0, _, ry1 = cy.shape
        if k == 0:
            cores.append(np.concatenate((cx, cy), axis=2))
        elif k == x.d - 1:
            cores.append(np.concatenate((alpha * cx, beta * cy), axis=0))
        else:
            block = np.zeros((rx0 + ry0, n, rx1 + ry1))
            block[:rx0, :, :rx1] = cx
            block[rx0:, :, rx1:] = cy
            cores.append(block)
    return TensorTrain(cores)


def apply_op_core(a_core: np.ndarray, x_core: np.ndarray) -> np.ndarray:
    """One core of A @ x: rank index fused as (operator rank, vector rank)."""
    ra0, n, m, ra1 = a_core.shape
    rx0, m2, rx1 = x_core.shape
    if m != m2:
        raise ContractViolation(f"Operator column size {m} does not match vector mode size {m2}")
    op = a_core.transpose(0, 1, 3, 2).reshape(ra0 * n * ra1, m)
    vec = x_core.transpose(1, 0, 2).reshape(m, rx0 * rx1)
    out = contract(op, vec).reshape(ra0, n, ra1, rx0, rx1)
    return out.transpose(0, 3, 1, 2, 4).reshape(ra0 * rx0, n, ra1 * rx1)


def tt_apply_op(a: TTOperator, x: TensorTrain) -> TensorTrain:
    """Exact operator application; ranks multiply."""
    if a.col_dims != x.dims:
        raise ContractViolation(f"Operator columns {a.col_dims} do not match train dims {x.dims}")
    return TensorTrain([apply_op_core(ac, xc) for ac, xc in zip(a.cores, x.cores)])


# --- orthogonalization and truncation -------------------------------------------------

def orthogonalize(x: TensorTrain, direction: str = LEFT, stop_index: Optional[int] = None) -> TensorTrain:
    """Householder orthogonalization sweep, in place.

    ``direction='left'`` makes cores ``0 .. stop_index-1`` left-orthogonal
    (default ``stop_index = d-1``); ``direction='right'`` makes cores
    ``stop_index .. d-1`` right-orthogonal (default ``stop_index = 1``).
    Cores that are already orthogonal are skipped.
    """
    d = x.d
    if direction == LEFT:
        stop = d - 1 if stop_index is None else stop_index
        if not 0 <= stop <= d - 1:
            raise ContractViolation(f"stop_index {stop} out of range for d={d}")
        for k in range(x.left_ortho, stop):
            core, nxt = x.cores[k], x.cores[k + 1]
            q, r = householder_qr(left_unfold(core))
            x.cores[k] = q.reshape(core.shape[0], core.shape[1], q.shape[1])
            x.cores[k + 1] = contract(r, right_unfold(nxt)).reshape(r.shape[0], nxt.shape[1], nxt.shape[2])
        if stop > x.left_ortho:
            x.mark(stop, min(x.right_ortho, d - 1 - stop))
    elif direction == RIGHT:
        stop = 1 if stop_index is None else stop_index
        if not 1 <= stop <= d:
            raise ContractViolation(f"stop_index {stop} out of range for d={d}")
        for k in range(d - 1 - x.right_ortho, stop - 1, -1):
            core, prev = x.cores[k], x.cores[k - 1]
            q, r = householder_qr(right_unfold(core).T)
            x.cores[k] = q.T.reshape(q.shape[1], core.shape[1], core.shape[2])
            x.cores[k - 1] = contract(left_unfold(prev), r, trans_b=True).reshape(prev.shape[0], prev.shape[1], r.shape[0])
        if d - stop > x.right_ortho:
            x.mark(min(x.left_ortho, stop - 1), d - stop)
    else:
        raise ContractViolation(f"Unknown direction '{direction}'")
    return x


def svd_sweep(x: TensorTrain, abs_tol: float, max_rank: Optional[int] = None) -> TensorTrain:
    """Right-to-left truncated-SVD sweep over a left-orthogonal train, in place.

    The tolerance is split evenly (in the Pythagorean sense) over the d-1 bonds.
    """
    if not x.is_left_orthogonal():
        raise ContractViolation("svd_sweep needs a left-orthogonal train")
    d = x.d
    if d == 1:
        return x
    step_tol = abs_tol / math.sqrt(d - 1)
    for k in range(d - 1, 0, -1):
        core, prev = x.cores[k], x.cores[k - 1]
        u, s, v = truncated_svd(right_unfold(core), step_tol, max_rank)
        x.cores[k] = v.T.reshape(v.shape[1], core.shape[1], core.shape[2])
        x.cores[k - 1] = contract(left_unfold(prev), u * s).reshape(prev.shape[0], prev.shape[1], u.shape[1])
    x.mark(0, d - 1)
    return x


def tt_truncate(x: TensorTrain, abs_tol: float = 0.0, max_rank: Optional[int] = None,
                rel_tol: float = 0.0) -> TensorTrain:
    """Standard rounding: QR sweep left to right, SVD sweep right to left.

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
    orthogonalize(y, LEFT)
    norm = float(np.linalg.norm(y.cores[-1]))
    return svd_sweep(y, abs_tol + rel_tol * norm, max_rank)


def tt_residual(a: TTOperator, x: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Exact A @ x - b (ranks r_A * r_x + r_b)."""
    return tt_axpby_raw(1.0, tt_apply_op(a, x), -1.0, b)


def tt_residual_norm(a: TTOperator, x: TensorTrain, b: TensorTrain, abs_tol: float = 0.0) -> float:
    """Independent check of ||A @ x - b||_F through TT arithmetic.

    With the default ``abs_tol=0`` the norm is read off the left-orthogonalized
    exact residual, so no truncation error enters the check. A positive
    ``abs_tol`` rounds the residual first; the result then differs from the
    exact norm by at most ``abs_tol``.
    """
    residual = tt_residual(a, x, b)
    if abs_tol > 0:
        residual = tt_truncate(residual, abs_tol)
    return tt_norm(residual)


def tt_zeros_like(x: TensorTrain) -> TensorTrain:
    return TensorTrain([np.zeros((1, n, 1)) for n in x.dims])
