"""Binary container for trains ("TTV1") and operators ("TTO1").

Layout, all little-endian:

    magic (4 bytes) | d (uint32) | dims (uint32 x d, operators: rows then cols)
    | ranks (uint32 x d+1) | operators only: symmetric flag (uint8)
    | cores as float64, core after core, each in column-major order

Column-major means Fortran order of the 3-d core array: element
``(a, i, b)`` of an ``r0 x n x r1`` core sits at ``a + r0 * (i + n * b)``.
This is not the layout of ``left_unfold``, which fuses ``(a, i)`` row-major
(row ``a * n + i``).
"""

import os
from typing import List, Tuple, Union

import numpy as np

from ttsolve.core.errors import ContractViolation
from ttsolve.core.tensor_train import TensorTrain, TTOperator
from ttsolve.utils.logger import setup_logger

logger = setup_logger()

TRAIN_MAGIC = b"TTV1"
OPERATOR_MAGIC = b"TTO1"

_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")

PathLike = Union[str, os.PathLike]


def _u32(values) -> bytes:
    return np.asarray(values, dtype=_U32).tobytes()


def _cores_bytes(cores: List[np.ndarray]) -> bytes:
    return b"".join(core.ravel(order="F").astype(_F64).tobytes() for core in cores)


def train_to_bytes(x: TensorTrain) -> bytes:
    return TRAIN_MAGIC + _u32([x.d]) + _u32(x.dims) + _u32(x.ranks) + _cores_bytes(x.cores)


def operator_to_bytes(a: TTOperator) -> bytes:
    header = OPERATOR_MAGIC + _u32([a.d]) + _u32(a.row_dims) + _u32(a.col_dims) + _u32(a.ranks)
    return header + bytes([1 if a.symmetric else 0]) + _cores_bytes(a.cores)


class _Reader:
    """Sequential cursor over a byte buffer that fails loudly on truncation."""

    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, dtype: np.dtype, count: int) -> np.ndarray:
        size = dtype.itemsize * count
        if self.offset + size > len(self.payload):
            raise ContractViolation("Container is truncated")
        values = np.frombuffer(self.payload, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return values

    def magic(self, expected: bytes) -> None:
        found = self.payload[:4]
        if found != expected:
            raise ContractViolation(f"Bad magic bytes {found!r}, expected {expected!r}")
        self.offset = 4

    def finish(self) -> None:
        if self.offset != len(self.payload):
            raise ContractViolation(f"{len(self.payload) - self.offset} trailing bytes after the last core")


def _read_cores(reader: _Reader, shapes: List[Tuple[int, ...]]) -> List[np.ndarray]:
    cores = []
    for shape in shapes:
        flat = reader.take(_F64, int(np.prod(shape)))
        cores.append(flat.reshape(shape, order="F").astype(np.float64))
    return cores


def train_from_bytes(payload: bytes) -> TensorTrain:
    reader = _Reader(payload)
    reader.magic(TRAIN_MAGIC)
    d = int(reader.take(_U32, 1)[0])
    dims = [int(n) for n in reader.take(_U32, d)]
    ranks = [int(r) for r in reader.take(_U32, d + 1)]
    shapes = [(ranks[k], dims[k], ranks[k + 1]) for k in range(d)]
    cores = _read_cores(reader, shapes)
    reader.finish()
    return TensorTrain(cores)


def operator_from_bytes(payload: bytes) -> TTOperator:
    reader = _Reader(payload)
    reader.magic(OPERATOR_MAGIC)
    d = int(reader.take(_U32, 1)[0])
    rows = [int(n) for n in reader.take(_U32, d)]
    cols = [int(n) for n in reader.take(_U32, d)]
    ranks = [int(r) for r in reader.take(_U32, d + 1)]
    symmetric = bool(reader.take(np.dtype("u1"), 1)[0])
    shapes = [(ranks[k], rows[k], cols[k], ranks[k + 1]) for k in range(d)]
    cores = _read_cores(reader, shapes)
    reader.finish()
    return TTOperator(cores, symmetric=symmetric)


def write_train(x: TensorTrain, path: PathLike) -> str:
    with open(path, "wb") as handle:
        handle.write(train_to_bytes(x))
    logger.debug(f"Wrote train {x.dims} ranks {x.ranks} to {path}")
    return str(path)


def read_train(path: PathLike) -> TensorTrain:
    with open(path, "rb") as handle:
        return train_from_bytes(handle.read())


def write_operator(a: TTOperator, path: PathLike) -> str:
    with open(path, "wb") as handle:
        handle.write(operator_to_bytes(a))
    logger.debug(f"Wrote operator {a.row_dims} ranks {a.ranks} to {path}")
    return str(path)


def read_operator(path: PathLike) -> TTOperator:
    with open(path, "rb") as handle:
        return operator_from_bytes(handle.read())
