from abc import ABC, abstractmethod
from typing import Optional, Tuple

from .report_models import SolveReport
from .tensor_train import TensorTrain, TTOperator


class ILinearSolver(ABC):
    """A solver for A X = B in tensor-train format."""

    name: str = "solver"
    epsilon: float

    @abstractmethod
    def solve(self, a: TTOperator, b: TensorTrain, x0: Optional[TensorTrain] = None) -> Tuple[TensorTrain, SolveReport]:
        pass
