from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator

from ttsolve.config import Config


class MethodName(str, Enum):
    GMRES = "gmres"
    MALS = "mals"
    AMEN = "amen"
    AMEN_SIMPLIFIED = "amen-simplified"


class Backend(str, Enum):
    """Which truncation kernels the Arnoldi process uses."""
    STANDARD = "standard"
    FAST = "fast"


class OrthoScheme(str, Enum):
    MGS = "mgs"
    SIMGS = "simgs"


class ToleranceRule(str, Enum):
    ADAPTIVE = "adaptive"
    NAIVE = "naive"


class ResidualBound(str, Enum):
    SAFE = "safe"
    SHARP = "sharp"


class MalsInner(str, Enum):
    TT = "tt"
    DENSE = "dense"


class RhsKind(str, Enum):
    ONES = "ones"
    RANDOM = "random"
    FILE = "file"


class GmresConfig(BaseModel):
    """Parameters of one TT-GMRES (or TT-MINRES) run."""
    epsilon: float = Field(default=1e-8, gt=0, description="Target relative residual ||B - A X|| / ||B||")
    max_iters: int = Field(default=50, ge=1, description="Maximal number of Arnoldi steps m")
    cond_estimate: float = Field(default=Config.DEFAULT_COND_ESTIMATE, ge=1,
                                 description="Estimated condition number c used by the truncation rule")
    ortho_scheme: OrthoScheme = Field(default=OrthoScheme.SIMGS, description="Gram-Schmidt variant")
    symmetric: bool = Field(default=False, description="Use the MINRES short recurrence")
    restart: int = Field(default=0, ge=0, description="Arnoldi steps per cycle (0 = no restart)")
    backend: Backend = Field(default=Backend.FAST, description="Truncation kernels")
    tolerance_rule: ToleranceRule = Field(default=ToleranceRule.ADAPTIVE,
                                          description="adaptive: relaxed per-step truncation, naive: truncate everything at delta_i")
    residual_bound: ResidualBound = Field(default=ResidualBound.SAFE,
                                          description="safe: gamma_i/gamma_0 <= 0.5 eps, sharp: account for truncation errors")


class AmenOptions(BaseModel):
    """Options shared by both AMEn variants."""
    k_enrich: int = Field(default=Config.DEFAULT_K_ENRICH, ge=0, description="Enrichment directions per site")
    inner_epsilon: float = Field(default=1e-2, gt=0, lt=1,
                                 description="Local solves reduce the local residual by this factor")
    truncate_local: bool = Field(default=True, description="Truncate local solutions before enrichment")
    local_max_iters: int = Field(default=100, ge=1, description="Dense GMRES iterations per local restart cycle")
    local_restarts: int = Field(default=5, ge=1, description="Dense GMRES restart cycles per local solve")


class MalsOptions(BaseModel):
    inner: GmresConfig = Field(default_factory=lambda: GmresConfig(max_iters=30),
                               description="Inner TT-GMRES configuration; epsilon is replaced per pair")
    mals_inner: MalsInner = Field(default=MalsInner.TT, description="tt: factored d=2 TT-GMRES, dense: two-site LocalOp")
    local_max_iters: int = Field(default=200, ge=1, description="Dense GMRES iterations when mals_inner=dense")


class ProblemSpec(BaseModel):
    """A generated (or loaded) linear system A X = B."""
    d: int = Field(default=3, ge=1, description="Number of modes")
    n: int = Field(default=5, ge=2, description="Grid points per mode")
    c: float = Field(default=10.0, description="Convection coefficient")
    rhs: RhsKind = Field(default=RhsKind.ONES, description="Right-hand side family")
    rhs_rank: int = Field(default=1, ge=1, description="Interior ranks of a random right-hand side")
    rhs_file: Optional[str] = Field(default=None, description="TTV1 file when rhs='file'")
    operator_file: Optional[str] = Field(default=None, description="TTO1 file replacing the generated operator")

    @model_validator(mode="after")
    def _file_needs_path(self) -> "ProblemSpec":
        if self.rhs == RhsKind.FILE and not self.rhs_file:
            raise ValueError("rhs='file' requires rhs_file")
        return self

    def label(self) -> str:
        return f"d{self.d}_n{self.n}_c{self.c:g}_{self.rhs.value}"


class RunConfig(BaseModel):
    """Schema of the JSON file passed to the command line."""
    method: MethodName = Field(default=MethodName.AMEN_SIMPLIFIED, description="Solver used by 'solve'")
    methods: List[MethodName] = Field(default_factory=list, description="Solvers compared by 'compare'")
    problem: ProblemSpec = Field(default_factory=ProblemSpec)
    epsilon: float = Field(default=1e-8, gt=0, description="Target relative residual")
    max_iters: int = Field(default=50, ge=1, description="GMRES steps, or sweeps for MALS/AMEn")
    cond_estimate: float = Field(default=Config.DEFAULT_COND_ESTIMATE, ge=1)
    precond: bool = Field(default=False, description="Apply the rank-1 two-sided preconditioner")
    compare_precond: bool = Field(default=False, description="compare: run every method with and without preconditioner")
    backend: Backend = Field(default=Backend.FAST)
    ortho_scheme: OrthoScheme = Field(default=OrthoScheme.SIMGS)
    restart: int = Field(default=0, ge=0)
    k_enrich: int = Field(default=Config.DEFAULT_K_ENRICH, ge=0)
    inner_epsilon: float = Field(default=1e-2, gt=0, lt=1)
    truncate_local: bool = Field(default=True)
    mals_inner: MalsInner = Field(default=MalsInner.TT)
    sv_floor: float = Field(default=Config.DEFAULT_SV_FLOOR, gt=0, lt=1)
    seed: int = Field(default=0, ge=0, description="Seed for random right-hand sides and initial guesses")

    @model_validator(mode="after")
    def _compare_needs_methods(self) -> "RunConfig":
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        return self

    def gmres_config(self, **overrides) -> GmresConfig:
        values = dict(
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            cond_estimate=self.cond_estimate,
            ortho_scheme=self.ortho_scheme,
            restart=self.restart,
            backend=self.backend,
        )
        values.update(overrides)
        return GmresConfig(**values)

    def amen_options(self) -> AmenOptions:
        return AmenOptions(k_enrich=self.k_enrich, inner_epsilon=self.inner_epsilon,
                           truncate_local=self.truncate_local)

    def mals_options(self) -> MalsOptions:
        inner = GmresConfig(max_iters=30, cond_estimate=self.cond_estimate, backend=self.backend)
        return MalsOptions(inner=inner, mals_inner=self.mals_inner)
