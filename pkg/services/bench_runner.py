"""Benchmark orchestration for the command line.

Builds the configured problem once, runs one or more solvers on it and turns the
reports into comparison and rank-trace rows.
"""

from typing import Dict, List, Optional, Tuple

from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.rule import Rule

from ttsolve.core.errors import ConfigError
from ttsolve.core.interfaces import ILinearSolver
from ttsolve.core.models import MethodName, OrthoScheme, RunConfig, ToleranceRule
from ttsolve.core.report_models import ComparisonRow, RankTraceRow, SolveReport
from ttsolve.core.tensor_train import TensorTrain, TTOperator
from ttsolve.services.amen import SimplifiedAmenSolver, TTAmenSolver
from ttsolve.services.gmres import TTGmresSolver
from ttsolve.services.mals import TTMalsSolver
from ttsolve.services.preconditioner import PreconditionedSolver, RankOnePrecond, rank1_precond
from ttsolve.services.problems import build_problem
from ttsolve.utils.logger import console, setup_logger

logger = setup_logger()

RANK_VARIANTS = ("mgs", "simgs", "precond", "naive")


class BenchRunner:
    """Runs the solvers named by a RunConfig on one shared problem instance."""

    def __init__(self, run: RunConfig):
        self.run = run
        self.notices: List[str] = []
        self.a, self.b = self._build_problem()
        self.label = run.problem.label()
        self._precond: Optional[RankOnePrecond] = None

    def _build_problem(self) -> Tuple[TTOperator, TensorTrain]:
        with console.status("[bold blue]Building problem...", spinner="dots"):
            a, b = build_problem(self.run.problem, seed=self.run.seed, notices=self.notices)
        logger.info(f"Problem {self.run.problem.label()}: operator {a}, right-hand side ranks {b.ranks}")
        return a, b

    @property
    def precond(self) -> RankOnePrecond:
        if self._precond is None:
            self._precond = rank1_precond(self.a, self.run.sv_floor)
        return self._precond

    def make_solver(self, method: MethodName, precond: bool = False) -> ILinearSolver:
        """Solver for one method, optionally wrapped in the rank-1 preconditioner.

        Args:
            method: Which solver to build
            precond: Wrap the solver in a PreconditionedSolver

        Returns:
            A configured ILinearSolver
        """
        run = self.run
        if method == MethodName.GMRES:
            solver: ILinearSolver = TTGmresSolver(run.gmres_config())
        elif method == MethodName.MALS:
            solver = TTMalsSolver(run.epsilon, run.max_iters, run.mals_options(), seed=run.seed)
        elif method == MethodName.AMEN:
            solver = TTAmenSolver(run.epsilon, run.max_iters, run.amen_options(), seed=run.seed)
        elif method == MethodName.AMEN_SIMPLIFIED:
            solver = SimplifiedAmenSolver(run.epsilon, run.max_iters, run.amen_options(), seed=run.seed)
        else:
            raise ConfigError(f"Unknown method: {method}")
        if precond:
            solver = PreconditionedSolver(solver, self.precond)
        return solver

    def _with_notices(self, report: SolveReport) -> SolveReport:
        if not self.notices:
            return report
        return report.model_copy(update={"notices": self.notices + list(report.notices)})

    def solve(self) -> Tuple[TensorTrain, SolveReport]:
        logger.info("=" * 60)
        logger.info(f"SOLVE: {self.run.method.value} on {self.label}")
        logger.info("=" * 60)
        solver = self.make_solver(self.run.method, self.run.precond)
        with console.status(f"[bold blue]Running {solver.name}...", spinner="dots"):
            x, report = solver.solve(self.a, self.b)
        return x, self._with_notices(report)

    def _comparison_runs(self) -> List[Tuple[MethodName, bool]]:
        methods = self.run.methods or [self.run.method]
        if self.run.compare_precond:
            return [(method, flag) for method in methods for flag in (False, True)]
        return [(method, self.run.precond) for method in methods]

    def compare(self) -> List[ComparisonRow]:
        """Run every configured method on the shared problem, one row per run."""
        runs = self._comparison_runs()
        logger.info("=" * 60)
        logger.info(f"COMPARE: {len(runs)} runs on {self.label}")
        logger.info("=" * 60)
        if len(runs) < 2:
            logger.warning("Comparison with a single run; the table has one row")

        rows: List[ComparisonRow] = []
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            console=console
        ) as progress:
            task = progress.add_task("[cyan]Comparison", total=len(runs))
            for idx, (method, precond) in enumerate(runs, start=1):
                solver = self.make_solver(method, precond)
                progress.update(task, description=f"[cyan]Run {idx}/{len(runs)}: [italic]{solver.name}[/italic]")
                _, report = solver.solve(self.a, self.b)
                rows.append(ComparisonRow(
                    method=method.value,
                    problem=self.label,
                    precond=precond,
                    converged=report.converged,
                    iterations=report.iterations,
                    final_residual=report.final_residual,
                    max_rank=max(report.solution_ranks) if report.solution_ranks else 1,
                    total_flops=report.total_flops,
                    seconds=report.wall_seconds,
                ))
                logger.info(f"{solver.name}: converged={report.converged}, flops={report.total_flops:,}, "
                            f"residual={report.final_residual:.3e}")
                progress.advance(task)

        console.print(Rule(style="bold green"))
        return rows

    def _rank_solver(self, variant: str) -> ILinearSolver:
        if variant == "mgs":
            return TTGmresSolver(self.run.gmres_config(ortho_scheme=OrthoScheme.MGS), name="gmres-mgs")
        if variant == "simgs":
            return TTGmresSolver(self.run.gmres_config(ortho_scheme=OrthoScheme.SIMGS), name="gmres-simgs")
        if variant == "naive":
            config = self.run.gmres_config(tolerance_rule=ToleranceRule.NAIVE)
            return TTGmresSolver(config, name="gmres-naive")
        if variant == "precond":
            return PreconditionedSolver(TTGmresSolver(self.run.gmres_config(), name="gmres"), self.precond)
        raise ConfigError(f"Unknown rank-trace variant: {variant}")

    def ranktrace(self) -> Tuple[List[RankTraceRow], List[str]]:
        """Per-iteration max Krylov basis rank of each TT-GMRES variant."""
        logger.info("=" * 60)
        logger.info(f"RANK TRACE: {', '.join(RANK_VARIANTS)} on {self.label}")
        logger.info("=" * 60)

        traces: Dict[str, List[int]] = {}
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            console=console
        ) as progress:
            task = progress.add_task("[cyan]Rank trace", total=len(RANK_VARIANTS))
            for variant in RANK_VARIANTS:
                progress.update(task, description=f"[cyan]Variant [italic]{variant}[/italic]")
                _, report = self._rank_solver(variant).solve(self.a, self.b)
                traces[variant] = [row.max_rank for row in report.trace]
                logger.info(f"{variant}: {len(report.trace)} steps, peak rank {max(traces[variant], default=0)}")
                progress.advance(task)

        length = max(len(ranks) for ranks in traces.values())
        rows = [
            RankTraceRow(iteration=i + 1,
                         ranks={variant: ranks[i] if i < len(ranks) else None for variant, ranks in traces.items()})
            for i in range(length)
        ]
        return rows, list(RANK_VARIANTS)
