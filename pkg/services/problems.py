"""Test problems: the d-dimensional convection-diffusion operator and right-hand side families."""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ttsolve.core.errors import ConfigError, ContractViolation
from ttsolve.core.models import ProblemSpec, RhsKind
from ttsolve.core.serialization import read_operator, read_train
from ttsolve.core.tensor_train import TensorTrain, TTOperator, tt_norm, tt_random, tt_scale
from ttsolve.utils.logger import setup_logger

logger = setup_logger()


def laplace_1d(n: int, c: float = 0.0, d_total: int = 1) -> np.ndarray:
    """One-dimensional stencil ``(-1, 2, -1)/h^2 + c/sqrt(d) (0, 1, -1)/h`` on n interior points.

    The grid spacing is ``h = 1/(n+1)``; the stencil is applied uniformly to
    every row, so the first row carries no special boundary treatment.
    """
    if n < 2:
        raise ContractViolation(f"Grid size must be at least 2, got {n}")
    if d_total < 1:
        raise ContractViolation("d_total must be positive")
    h = 1.0 / (n + 1)
    diffusion = (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h**2
    convection = (np.eye(n) - np.eye(n, k=1)) * (c / math.sqrt(d_total) / h)
    return diffusion + convection


def conv_diff_operator(dims: Sequence[int], c: float = 10.0) -> TTOperator:
    """Kronecker sum ``sum_j I (x) .. (x) L_j (x) .. (x) I`` as a rank-2 TT operator.

    First core ``[L_1, I]``, middle cores ``[[I, 0], [L_k, I]]``, last core ``[I; L_d]``.
    """
    dims = list(dims)
    if not dims:
        raise ContractViolation("At least one mode is required")
    d = len(dims)
    stencils = [laplace_1d(n, c, d) for n in dims]
    symmetric = c == 0
    if d == 1:
        return TTOperator([stencils[0].reshape(1, dims[0], dims[0], 1)], symmetric)

    cores: List[np.ndarray] = []
    for k, (n, lap) in enumerate(zip(dims, stencils)):
        eye = np.eye(n)
        if k == 0:
            core = np.zeros((1, n, n, 2))
            core[0, :, :, 0] = lap
            core[0, :, :, 1] = eye
        elif k == d - 1:
            core = np.zeros((2, n, n, 1))
            core[0, :, :, 0] = eye
            core[1, :, :, 0] = lap
        else:
            core = np.zeros((2, n, n, 2))
            core[0, :, :, 0] = eye
            core[1, :, :, 0] = lap
            core[1, :, :, 1] = eye
        cores.append(core)
    return TTOperator(cores, symmetric)


def rhs_ones(dims: Sequence[int]) -> TensorTrain:
    return TensorTrain([np.ones((1, n, 1)) for n in dims])


def rhs_random(dims: Sequence[int], ranks: Sequence[int], seed: int = 0,
               notices: Optional[List[str]] = None) -> TensorTrain:
    """Random train with the requested ranks, scaled to unit norm."""
    x = tt_random(dims, ranks, seed=seed, notices=notices)
    return tt_scale(x, 1.0 / tt_norm(x))


def build_problem(spec: ProblemSpec, seed: int = 0,
                  notices: Optional[List[str]] = None) -> Tuple[TTOperator, TensorTrain]:
    """Operator and right-hand side described by a ProblemSpec.

    Raises:
        ConfigError: if a referenced file cannot be read or does not match the problem
    """
    if spec.operator_file:
        try:
            a = read_operator(spec.operator_file)
        except (OSError, ContractViolation) as exc:
            raise ConfigError(f"Cannot load operator from {spec.operator_file}: {exc}") from exc
        logger.info(f"Loaded operator {a} from {spec.operator_file}")
    else:
        a = conv_diff_operator([spec.n] * spec.d, spec.c)

    if spec.rhs == RhsKind.FILE:
        try:
            b = read_train(spec.rhs_file)
        except (OSError, ContractViolation) as exc:
            raise ConfigError(f"Cannot load right-hand side from {spec.rhs_file}: {exc}") from exc
    elif spec.rhs == RhsKind.RANDOM:
        dims = a.col_dims
        b = rhs_random(dims, (1,) + (spec.rhs_rank,) * (len(dims) - 1) + (1,), seed=seed, notices=notices)
    else:
        b = rhs_ones(a.col_dims)

    if b.dims != a.col_dims:
        raise ConfigError(f"Right-hand side dims {b.dims} do not match operator dims {a.col_dims}")
    return a, b
