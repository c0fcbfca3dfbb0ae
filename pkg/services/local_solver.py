"""Dense restarted GMRES for the small projected systems of MALS and AMEn."""

from typing import Callable, NamedTuple, Optional

import numpy as np

from ttsolve.core.dense import contract
from ttsolve.core.errors import ContractViolation
from ttsolve.utils.logger import setup_logger

logger = setup_logger()


class LocalSolveResult(NamedTuple):
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool
    norm_estimate: float


def dense_gmres(apply: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray, x0: Optional[np.ndarray] = None,
                abs_tol: float = 0.0, max_iters: int = 100, restarts: int = 1) -> LocalSolveResult:
    """Restarted GMRES with modified Gram-Schmidt Arnoldi.

    Args:
        apply: the local operator, mapping arrays of ``rhs.shape`` to the same shape
        rhs: right-hand side (any shape; handled as a flat vector)
        x0: initial guess, zero by default
        abs_tol: absolute tolerance on ||rhs - apply(x)||
        max_iters: Arnoldi steps per restart cycle
        restarts: number of cycles

    Returns:
        LocalSolveResult with the solution in the shape of ``rhs``
    """
    if abs_tol < 0 or max_iters < 1 or restarts < 1:
        raise ContractViolation("dense_gmres needs abs_tol >= 0 and positive iteration counts")
    shape = rhs.shape
    b = np.asarray(rhs, dtype=np.float64).ravel()
    size = b.size
    x = np.zeros(size) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    if x.size != size:
        raise ContractViolation(f"Initial guess of size {x.size} does not match right-hand side of size {size}")

    def matvec(v: np.ndarray) -> np.ndarray:
        return np.asarray(apply(v.reshape(shape)), dtype=np.float64).ravel()

    iterations = 0
    norm_estimate = 0.0
    residual = float(np.linalg.norm(b - matvec(x))) if x0 is not None else float(np.linalg.norm(b))
    for _ in range(restarts):
        if residual <= abs_tol:
            break
        r = b - matvec(x) if iterations or x0 is not None else b.copy()
        beta = float(np.linalg.norm(r))
        steps = min(max_iters, size)
        basis = np.zeros((size, steps + 1))
        hess = np.zeros((steps + 1, steps))
        basis[:, 0] = r / beta
        y = np.zeros(0)
        k = 0
        for k in range(1, steps + 1):
            w = matvec(basis[:, k - 1])
            for j in range(k):
                h = contract(basis[:, j : j + 1], w[:, None], trans_a=True)
                hess[j, k - 1] = h[0, 0]
                w = w - contract(basis[:, j : j + 1], h).ravel()
            hess[k, k - 1] = np.linalg.norm(w)
            norm_estimate = max(norm_estimate, float(np.linalg.norm(hess[: k + 1, k - 1])))
            iterations += 1

            e1 = np.zeros(k + 1)
            e1[0] = beta
            y = np.linalg.lstsq(hess[: k + 1, :k], e1, rcond=None)[0]
            estimate = float(np.linalg.norm(hess[: k + 1, :k] @ y - e1))
            if estimate <= abs_tol or hess[k, k - 1] <= 1e-14 * norm_estimate:
                break
            basis[:, k] = w / hess[k, k - 1]
        x = x + contract(basis[:, :k], y[:, None]).ravel()
        residual = float(np.linalg.norm(b - matvec(x)))

    converged = residual <= abs_tol
    if not converged:
        logger.debug(f"dense_gmres: residual {residual:.3e} above {abs_tol:.3e} after {iterations} steps")
    return LocalSolveResult(x.reshape(shape), residual, iterations, converged, norm_estimate)
