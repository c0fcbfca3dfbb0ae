"""Dense linear-algebra kernels with an analytic flop counter.

Every operation on tensor-train cores ends up in one of the kernels below.
Each kernel charges its work to the module-level ``FLOPS`` counter, so the
solvers can report a portable operation count instead of hardware counters.
Products are charged exactly (2mnk); factorizations use closed-form estimates.
"""

from typing import Dict, Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla

from ttsolve.config import Config
from ttsolve.core.errors import ContractViolation, IndefiniteGramError
from ttsolve.utils.logger import setup_logger

logger = setup_logger()

ArrayLike = Union[np.ndarray, "Matrix"]

UNIT_ROUNDOFF = float(np.finfo(np.float64).eps)


class FlopCounter:
    """Monotone tally of floating-point operations per kernel class."""

    KINDS = ("contract", "qr", "svd", "cholesky")
    ESTIMATED_KINDS = ("qr", "svd", "cholesky")

    def __init__(self):
        self._tally: Dict[str, int] = {kind: 0 for kind in self.KINDS}

    def add(self, kind: str, flops: int) -> None:
        if kind not in self._tally:
            raise ContractViolation(f"Unknown flop class '{kind}'")
        if flops < 0:
            raise ContractViolation("Flop increments must be nonnegative")
        self._tally[kind] += int(flops)

    @property
    def total(self) -> int:
        return sum(self._tally.values())

    def by_kind(self) -> Dict[str, int]:
        return dict(self._tally)

    def snapshot(self) -> Dict[str, int]:
        """Current per-class values, to be handed back to ``since``."""
        return dict(self._tally)

    def since(self, snapshot: Dict[str, int]) -> Dict[str, int]:
        """Per-class flops spent after ``snapshot`` was taken."""
        return {kind: value - snapshot.get(kind, 0) for kind, value in self._tally.items()}


FLOPS = FlopCounter()


def padded_stride(rows: int) -> int:
    """Leading dimension for a padded column-major buffer.

    Rounded up to whole cache lines, then bumped by one line if the result
    would map every column onto the same cache sets.
    """
    line = Config.CACHE_LINE_DOUBLES
    stride = -(-max(rows, 1) // line) * line
    if stride % Config.THRASH_STRIDE == 0:
        stride += line
    return stride


class Matrix:
    """Column-major dense matrix with an explicit leading dimension.

    Element (i, j) lives at ``data[i + j * stride]``. ``view()`` exposes the
    logical ``rows x cols`` block as a strided numpy array without copying.
    """

    __slots__ = ("rows", "cols", "stride", "data")

    def __init__(self, rows: int, cols: int, stride: Optional[int] = None, data: Optional[np.ndarray] = None):
        stride = rows if stride is None else stride
        if stride < rows:
            raise ContractViolation(f"stride {stride} is smaller than the row count {rows}")
        if data is None:
            data = np.zeros(max(stride, 1) * cols, dtype=np.float64)
        elif data.dtype != np.float64 or data.ndim != 1 or data.size < stride * cols:
            raise ContractViolation("Matrix data must be a flat float64 buffer of at least stride*cols entries")
        self.rows = rows
        self.cols = cols
        self.stride = stride
        self.data = data

    @classmethod
    def from_array(cls, array: np.ndarray, pad: bool = False) -> "Matrix":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2:
            raise ContractViolation("Matrix.from_array expects a 2-d array")
        rows, cols = array.shape
        matrix = cls(rows, cols, padded_stride(rows) if pad else rows)
        matrix.view()[:, :] = array
        return matrix

    def view(self) -> np.ndarray:
        cols_major = self.data[: self.stride * self.cols].reshape(self.cols, max(self.stride, 1))
        return cols_major.T[: self.rows]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    def to_array(self) -> np.ndarray:
        return np.array(self.view())

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols}, stride={self.stride})"


def as_array(value: ArrayLike) -> np.ndarray:
    if isinstance(value, Matrix):
        return value.view()
    return np.asarray(value, dtype=np.float64)


def _require_2d(name: str, array: np.ndarray) -> None:
    if array.ndim != 2:
        raise ContractViolation(f"{name} must be 2-dimensional, got shape {array.shape}")


def contract(a: ArrayLike, b: ArrayLike, trans_a: bool = False, trans_b: bool = False) -> np.ndarray:
    """Dense product op(a) @ op(b), charged as 2mnk flops."""
    left = as_array(a)
    right = as_array(b)
    _require_2d("left operand", left)
    _require_2d("right operand", right)
    if trans_a:
        left = left.T
    if trans_b:
        right = right.T
    m, k = left.shape
    k2, n = right.shape
    if k != k2:
        raise ContractViolation(f"Inner dimensions do not match: {left.shape} @ {right.shape}")
    FLOPS.add("contract", 2 * m * n * k)
    return left @ right


def contract_batched(a: ArrayLike, b: np.ndarray) -> np.ndarray:
    """Apply one ``m x k`` matrix to a batch of ``k x n`` blocks."""
    left = as_array(a)
    _require_2d("left operand", left)
    right = np.asarray(b, dtype=np.float64)
    if right.ndim != 3:
        raise ContractViolation(f"Batched operand must be 3-dimensional, got shape {right.shape}")
    batch, k, n = right.shape
    m, k2 = left.shape
    if k != k2:
        raise ContractViolation(f"Inner dimensions do not match: {left.shape} @ batch of {right.shape[1:]}")
    FLOPS.add("contract", 2 * batch * m * n * k)
    return np.matmul(left, right)


def triangular_solve(r: ArrayLike, b: ArrayLike, lower: bool = False, trans: bool = False, kind: str = "qr") -> np.ndarray:
    """Solve op(R) X = B for triangular R without forming the inverse."""
    tri = as_array(r)
    rhs = as_array(b)
    _require_2d("triangular factor", tri)
    k = tri.shape[0]
    if tri.shape[1] != k or rhs.shape[0] != k:
        raise ContractViolation(f"Triangular solve shape mismatch: {tri.shape} and {rhs.shape}")
    n = 1 if rhs.ndim == 1 else rhs.shape[1]
    FLOPS.add(kind, k * k * n)
    return sla.solve_triangular(tri, rhs, lower=lower, trans="T" if trans else "N", check_finite=False)


def _fix_signs(q: Optional[np.ndarray], r: np.ndarray) -> None:
    diag = np.diag(r)
    signs = np.where(diag < 0, -1.0, 1.0)
    r *= signs[:, None]
    if q is not None:
        q *= signs[None, :]


def householder_qr(m: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Economic Householder QR with a nonnegative diagonal in R.

    Wide inputs are accepted as well; Q is then square and R trapezoidal.

    Args:
        m: Matrix of shape (rows, cols)

    Returns:
        Q with orthonormal columns and the upper triangular/trapezoidal R
    """
    a = as_array(m)
    _require_2d("QR input", a)
    rows, cols = a.shape
    q, r = sla.qr(a, mode="economic", check_finite=False)
    _fix_signs(q, r)
    # factorization plus the explicit Q
    FLOPS.add("qr", 2 * 2 * rows * cols * min(rows, cols))
    return q, r


def _r_only(block: np.ndarray) -> np.ndarray:
    rows, cols = block.shape
    FLOPS.add("qr", 2 * rows * cols * min(rows, cols))
    # mode="r" keeps all rows; only the leading triangle carries information
    return sla.qr(block, mode="r", check_finite=False)[0][: min(rows, cols)]


def qless_tsqr(m: ArrayLike, block_factor: Optional[int] = None) -> np.ndarray:
    """Triangular factor of a tall-skinny matrix through a serial TSQR tree.

    Leaves hold ``block_factor * cols`` rows; partial R factors are merged
    pairwise in block-index order, so the result is reproducible. Q is never
    formed.
    """
    a = as_array(m)
    _require_2d("TSQR input", a)
    rows, cols = a.shape
    factor = Config.TSQR_BLOCK_FACTOR if block_factor is None else block_factor
    height = max(factor * cols, cols, 1)

    partial = [_r_only(a[start : start + height]) for start in range(0, rows, height)]
    while len(partial) > 1:
        merged = []
        for idx in range(0, len(partial) - 1, 2):
            merged.append(_r_only(np.vstack((partial[idx], partial[idx + 1]))))
        if len(partial) % 2:
            merged.append(partial[-1])
        partial = merged

    r = np.array(partial[0])
    _fix_signs(None, r)
    return r


def truncated_svd(m: ArrayLike, abs_tol: float = 0.0, max_rank: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best low-rank approximation within an absolute Frobenius tolerance.

    The kept rank r' is the smallest one whose discarded tail has norm at
    most ``abs_tol``, capped by ``max_rank`` and never below one.

    Args:
        m: Matrix of shape (rows, cols)
        abs_tol: Absolute Frobenius-norm bound on the discarded part
        max_rank: Optional upper bound on r'

    Returns:
        (U, S, V) with U of shape rows x r', S descending, V of shape cols x r'
    """
    if abs_tol < 0:
        raise ContractViolation("abs_tol must be nonnegative")
    a = as_array(m)
    _require_2d("SVD input", a)
    rows, cols = a.shape
    if not np.any(a):
        u = np.zeros((rows, 1))
        v = np.zeros((cols, 1))
        u[0, 0] = 1.0
        v[0, 0] = 1.0
        return u, np.zeros(1), v

    try:
        u, s, vt = sla.svd(a, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        logger.debug("gesdd did not converge, retrying with gesvd")
        u, s, vt = sla.svd(a, full_matrices=False, lapack_driver="gesvd", check_finite=False)
    FLOPS.add("svd", 14 * max(rows, cols) * min(rows, cols) ** 2)

    tail_sq = np.append(np.cumsum((s**2)[::-1])[::-1], 0.0)
    rank = int(np.argmax(tail_sq[1:] <= abs_tol**2)) + 1
    if max_rank is not None:
        rank = min(rank, max(int(max_rank), 1))
    return u[:, :rank], s[:rank], vt[:rank].T


def _cholesky_shifts():
    steps = int(round(np.log10(Config.CHOLESKY_SHIFT_MAX / Config.CHOLESKY_SHIFT_START)))
    return [0.0] + [Config.CHOLESKY_SHIFT_START * 10.0**k for k in range(steps + 1)]


def cholesky_spd(g: ArrayLike) -> np.ndarray:
    """Lower Cholesky factor of a (nearly) positive definite Gram matrix.

    Escalating diagonal shifts relative to the trace are tried before giving up.

    Raises:
        IndefiniteGramError: if even the largest shift leaves a non-positive pivot
    """
    gram = as_array(g)
    _require_2d("Gram matrix", gram)
    n = gram.shape[0]
    if gram.shape[1] != n:
        raise ContractViolation(f"Gram matrix must be square, got {gram.shape}")
    gram = 0.5 * (gram + gram.T)
    trace = float(np.trace(gram))

    for shift in _cholesky_shifts():
        FLOPS.add("cholesky", n**3 // 3)
        try:
            factor = sla.cholesky(gram + shift * trace * np.eye(n), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if shift > 0:
            logger.debug(f"Cholesky needed a diagonal shift of {shift:g} * trace")
        return factor
    raise IndefiniteGramError(f"Gram matrix of order {n} is not positive definite after shifting")
