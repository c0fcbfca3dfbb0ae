"""Bookkeeping shared by all solvers: trace rows, flop and fallback deltas, wall time."""

import time
from typing import List, Optional, Sequence

from ttsolve.core.dense import FLOPS, FlopCounter
from ttsolve.core.fast import FALLBACKS
from ttsolve.core.report_models import SolveReport, TraceRecord
from ttsolve.core.tensor_train import TensorTrain


class RunRecorder:
    def __init__(self, method: str):
        self.method = method
        self._flops_start = FLOPS.snapshot()
        self._fallbacks_start = FALLBACKS.snapshot()
        self._t0 = time.perf_counter()
        self.trace: List[TraceRecord] = []
        self.notices: List[str] = []

    @property
    def flops(self) -> int:
        return sum(FLOPS.since(self._flops_start).values())

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self._t0

    def record(self, residual_estimate: float, ranks: Sequence[int], sweep: int = 0, site: Optional[int] = None,
               true_residual: Optional[float] = None) -> TraceRecord:
        row = TraceRecord(
            index=len(self.trace),
            sweep=sweep,
            site=site,
            residual_estimate=float(residual_estimate),
            true_residual=None if true_residual is None else float(true_residual),
            max_rank=max(ranks),
            ranks=[int(r) for r in ranks],
            cumulative_flops=self.flops,
            wall_seconds=self.elapsed,
        )
        self.trace.append(row)
        return row

    def notice(self, message: str) -> None:
        self.notices.append(message)

    def finish(self, x: TensorTrain, converged: bool, final_residual: float, iterations: int = 0,
               sweeps: int = 0, norm_estimate: Optional[float] = None) -> SolveReport:
        by_kernel = FLOPS.since(self._flops_start)
        return SolveReport(
            method=self.method,
            converged=converged,
            iterations=iterations,
            sweeps=sweeps,
            final_residual=float(final_residual),
            trace=self.trace,
            total_flops=sum(by_kernel.values()),
            flops_by_kernel=by_kernel,
            flops_estimated_kinds=list(FlopCounter.ESTIMATED_KINDS),
            fallbacks=FALLBACKS.since(self._fallbacks_start),
            notices=self.notices,
            wall_seconds=self.elapsed,
            solution_ranks=list(x.ranks),
            norm_estimate=norm_estimate,
        )
