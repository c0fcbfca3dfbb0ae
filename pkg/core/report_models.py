from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from ttsolve.config import Config


class TraceRecord(BaseModel):
    """One Arnoldi step, restart cycle or sweep site."""
    index: int = Field(ge=0, description="Running row number")
    sweep: int = Field(default=0, ge=0, description="Half-sweep (MALS/AMEn) or restart cycle (GMRES)")
    site: Optional[int] = Field(default=None, description="Core index of a sweep step")
    residual_estimate: float = Field(description="gamma_i/||B|| (GMRES) or delta_j/||B|| (sweeps)")
    true_residual: Optional[float] = Field(default=None, description="Independently recomputed relative residual")
    max_rank: int = Field(ge=1)
    ranks: List[int] = Field(description="Rank vector of the newest basis vector or of the iterate")
    cumulative_flops: int = Field(ge=0)
    wall_seconds: float = Field(ge=0)


class SolveReport(BaseModel):
    """Outcome of one solver run."""
    schema_version: int = Field(default=Config.SCHEMA_VERSION)
    method: str
    converged: bool
    iterations: int = Field(default=0, ge=0, description="Arnoldi steps or local solves")
    sweeps: int = Field(default=0, ge=0, description="Completed half-sweeps")
    final_residual: float = Field(description="True relative residual ||B - A X|| / ||B|| of the returned X")
    trace: List[TraceRecord] = Field(default_factory=list)
    total_flops: int = Field(default=0, ge=0)
    flops_by_kernel: Dict[str, int] = Field(default_factory=dict)
    flops_estimated_kinds: List[str] = Field(default_factory=list, description="Kernel classes counted by estimate")
    fallbacks: Dict[str, int] = Field(default_factory=dict)
    notices: List[str] = Field(default_factory=list)
    wall_seconds: float = Field(default=0.0, ge=0)
    solution_ranks: List[int] = Field(default_factory=list)
    norm_estimate: Optional[float] = Field(default=None, description="Largest Hessenberg column norm seen")


class ComparisonRow(BaseModel):
    method: str
    problem: str
    precond: bool
    converged: bool
    iterations: int
    final_residual: float
    max_rank: int
    total_flops: int
    seconds: float


class RankTraceRow(BaseModel):
    iteration: int = Field(ge=1)
    ranks: Dict[str, Optional[int]] = Field(description="Max Krylov rank per variant; None once a variant stopped")


class ComparisonReport(BaseModel):
    """Rows and banner data of the comparison workbook."""
    title: str = Field(description="Problem label shown in the title banner")
    run_id: str
    generated_at: str
    seed: int = Field(default=0, ge=0)
    rows: List[ComparisonRow] = Field(default_factory=list)
