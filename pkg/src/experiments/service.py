from __future__ import annotations

import asyncio
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel

from src.capacity.capacity_measures import (
    CapacityChecks,
    GammaReport,
    block_measure,
    capacity,
    capacity_property_checks,
    capacity_refinement_table,
    gamma_sequence_test,
    nodes_in_intervals,
)
from src.config.settings import Settings
from src.errors import ConfigError
from src.experiments.config_models import CapacitySection, ContinuationSection, ExperimentConfig, GammaSection
from src.experiments.expressions import interpolate_expression
from src.experiments.presets import ZERO_NORM_BASELINE_P, ZERO_NORM_SCHEDULES
from src.experiments.writers import write_csv, write_gamma_csv, write_json, write_solution_csv
from src.fem.core_fe import Mesh1D, mass_matrix, stiffness_matrix
from src.fem.frac_gram import GramOperator, SpaceKind, assemble, assemble_spectral, write_dense_matrix
from src.instrumentation import timed_async
from src.optim.solver import (
    ContinuationReport,
    OptimalityReport,
    ProblemConfig,
    SolveReport,
    SolveSummary,
    dc_solve,
    optimality_report,
    p_to_zero_continuation,
    smoothed_gauss_value,
    summarize,
)

logger = logging.getLogger("fracap.experiments")

T = TypeVar("T")

DEFAULT_CAPACITY_SETS: Dict[str, List[Tuple[float, float]]] = {
    "empty": [],
    "middle": [(0.4, 0.6)],
    "middle_wide": [(0.3, 0.7)],
    "two_blocks": [(0.1, 0.2), (0.7, 0.8)],
}


class AssembleOutput(BaseModel):
    kind: str
    s: float
    n: int
    files: List[str]
    symmetric: bool
    min_diagonal: float


class SolveOutput(BaseModel):
    run: str
    kind: str
    s: float
    p: float
    alpha: float
    beta: float
    n: int
    summary: SolveSummary
    optimality: OptimalityReport
    smoothed_gauss: float


class CapacityRow(BaseModel):
    name: str
    nodes: int
    value: float
    bounded_0_1: bool


class RefinementRow(BaseModel):
    name: str
    n: int
    nodes: int
    value: float


class CapacityOutput(BaseModel):
    kind: str
    s: float
    n: int
    sets: List[CapacityRow]
    checks: CapacityChecks
    refinement: List[RefinementRow]


class GammaOutput(BaseModel):
    kind: str
    s: float
    n: int
    weights: List[float]
    report: GammaReport


class ComparisonRow(BaseModel):
    first: str
    second: str
    normalized_correlation: float
    amplitude_ratio: float
    l2_difference: float


class SpacesOutput(BaseModel):
    rescaled_alpha: float
    runs: List[SolveOutput]
    comparison: List[ComparisonRow]


class SupportRow(BaseModel):
    run: str
    p: float
    factor: float
    support_measure: float
    support_nodes: int
    max_abs_w: float
    converged: bool
    iterations: int


class ZeroNormOutput(BaseModel):
    runs: List[SolveOutput]
    supports: List[SupportRow]
    continuation: Optional[ContinuationReport] = None


class ExperimentService:
    """Runs the configured commands and writes their files.

    Independent solves fan out over worker threads, bounded by a semaphore;
    results are collected in input order.
    """

    def __init__(self, settings: Settings, *, solve_concurrency: asyncio.Semaphore | None = None):
        self._settings = settings
        self._solve_sem = solve_concurrency

    async def _offload(self, fn: Callable[..., T], *args: Any, **kwargs: Any) -> T:
        if self._solve_sem:
            async with self._solve_sem:
                return await asyncio.to_thread(fn, *args, **kwargs)
        return await asyncio.to_thread(fn, *args, **kwargs)

    # ------------------------------------------------------------------ helpers

    def output_dir(self, cfg: ExperimentConfig) -> Path:
        return Path(cfg.output.dir or self._settings.output_dir)

    def mesh(self, cfg: ExperimentConfig) -> Mesh1D:
        return Mesh1D(cfg.mesh.a, cfg.mesh.b, cfg.mesh.n or self._settings.default_n)

    def problem(
        self,
        cfg: ExperimentConfig,
        mesh: Mesh1D,
        *,
        kind: SpaceKind | None = None,
        alpha: float | None = None,
        p: float | None = None,
        factor: float | None = None,
    ) -> ProblemConfig:
        sched = cfg.schedule
        return ProblemConfig(
            alpha=cfg.problem.alpha if alpha is None else alpha,
            beta=cfg.problem.beta,
            p=cfg.problem.p if p is None else p,
            s=cfg.space.s,
            kind=kind or cfg.space.kind,
            mesh=mesh,
            w_d=interpolate_expression(mesh, cfg.problem.w_d_expression),
            eps0=sched.eps0,
            eps_factor=sched.factor if factor is None else factor,
            eps_min=sched.eps_min,
            tol_step=sched.tol,
            max_iter=sched.max_iter,
            init=cfg.problem.init,
            inner_max_iter=sched.inner_max_iter,
        )

    def _solve_one(self, run: str, problem: ProblemConfig, G: GramOperator, M: np.ndarray) -> Tuple[SolveReport, SolveOutput]:
        report = dc_solve(problem, G=G, M=M)
        output = SolveOutput(
            run=run,
            kind=problem.kind.value,
            s=problem.s,
            p=problem.p,
            alpha=problem.alpha,
            beta=problem.beta,
            n=problem.mesh.n_elems,
            summary=summarize(problem, report),
            optimality=optimality_report(problem, report, G, M),
            smoothed_gauss=smoothed_gauss_value(problem, report),
        )
        return report, output

    def _write_run(self, cfg: ExperimentConfig, directory: Path, report: SolveReport, output: SolveOutput) -> None:
        if "csv" in cfg.output.formats:
            write_solution_csv(directory / "solution.csv", report.w_K, report.z_K, report.lambda_K, report.mu_K)
        if "json" in cfg.output.formats:
            write_json(directory / "report.json", output)

    # ----------------------------------------------------------------- commands

    @timed_async(logger, "cmd_assemble")
    async def assemble(self, cfg: ExperimentConfig) -> AssembleOutput:
        mesh = self.mesh(cfg)
        kind, s = cfg.space.kind, cfg.space.s
        # The spectral dump also covers the s = 1 anchor.
        builder = assemble_spectral if kind is SpaceKind.SPECTRAL else (lambda m, t: assemble(kind, m, t))
        G = await self._offload(builder, mesh, s)
        out = self.output_dir(cfg)
        files = [
            write_dense_matrix(out / "gram.txt", G.matrix),
            write_dense_matrix(out / "mass.txt", mass_matrix(mesh)),
            write_dense_matrix(out / "stiffness.txt", stiffness_matrix(mesh)),
        ]
        result = AssembleOutput(
            kind=G.kind.value,
            s=G.s,
            n=mesh.n_elems,
            files=[str(f) for f in files],
            symmetric=bool(np.array_equal(G.matrix, G.matrix.T)),
            min_diagonal=float(np.min(np.diag(G.matrix))),
        )
        logger.info("assemble_written kind=%s n=%d dir=%s", G.kind.value, mesh.n_elems, out)
        return result

    @timed_async(logger, "cmd_solve")
    async def solve(self, cfg: ExperimentConfig, *, run: str = "solve") -> SolveOutput:
        mesh = self.mesh(cfg)
        problem = self.problem(cfg, mesh)
        M = mass_matrix(mesh)
        G = await self._offload(assemble, problem.kind, mesh, problem.s)
        report, output = await self._offload(self._solve_one, run, problem, G, M)
        self._write_run(cfg, self.output_dir(cfg), report, output)
        return output

    async def reproduce_1d(self, cfg: ExperimentConfig) -> SolveOutput:
        output = await self.solve(cfg, run="reproduce-1d")
        opt = output.optimality
        logger.info(
            "support_coincidence jaccard=%.4f inclusion=%s supp_w=%d supp_z=%d",
            opt.jaccard, opt.support_inclusion, opt.support_w_size, opt.support_z_size,
        )
        return output

    @timed_async(logger, "cmd_capacity")
    async def capacity(self, cfg: ExperimentConfig) -> CapacityOutput:
        section = cfg.capacity or CapacitySection(sets=DEFAULT_CAPACITY_SETS)
        sets = section.sets or DEFAULT_CAPACITY_SETS
        mesh = self.mesh(cfg)
        kind, s = cfg.space.kind, cfg.space.s
        G = await self._offload(assemble, kind, mesh, s)

        rows = []
        for name, intervals in sets.items():
            res = capacity(G, nodes_in_intervals(mesh, intervals))
            rows.append(
                CapacityRow(
                    name=name,
                    nodes=int(nodes_in_intervals(mesh, intervals).size),
                    value=res.value,
                    bounded_0_1=res.bounded_0_1,
                )
            )
        checks = await self._offload(
            capacity_property_checks, G, section.random_pairs, np.random.default_rng(section.seed)
        )

        async def _refine(name: str, intervals):
            table = await self._offload(
                capacity_refinement_table,
                lambda m: assemble(kind, m, s),
                mesh.a,
                mesh.b,
                section.refinement,
                intervals,
            )
            return [RefinementRow(name=name, n=n, nodes=k, value=v) for n, k, v in table]

        tables = await asyncio.gather(*(_refine(name, iv) for name, iv in sets.items()))
        result = CapacityOutput(
            kind=kind.value,
            s=s,
            n=mesh.n_elems,
            sets=rows,
            checks=checks,
            refinement=[row for table in tables for row in table],
        )

        out = self.output_dir(cfg)
        if "csv" in cfg.output.formats:
            write_csv(out / "capacity.csv", ("name", "nodes", "capacity", "bounded_0_1"),
                      ([r.name, r.nodes, r.value, r.bounded_0_1] for r in result.sets))
            write_csv(
                out / "capacity_checks.csv",
                ("pairs", "monotone_violations", "subadditive_violations", "max_monotone_excess", "max_subadditive_excess"),
                [[checks.pairs, checks.monotone_violations, checks.subadditive_violations,
                  checks.max_monotone_excess, checks.max_subadditive_excess]],
            )
            write_csv(out / "capacity_refinement.csv", ("name", "n", "nodes", "capacity"),
                      ([r.name, r.n, r.nodes, r.value] for r in result.refinement))
        if "json" in cfg.output.formats:
            write_json(out / "capacity.json", result)
        return result

    @timed_async(logger, "cmd_gamma_test")
    async def gamma_test(self, cfg: ExperimentConfig) -> GammaOutput:
        section = cfg.gamma or GammaSection()
        mesh = self.mesh(cfg)
        G = await self._offload(assemble, cfg.space.kind, mesh, cfg.space.s)
        M = mass_matrix(mesh)
        left, right = section.block
        weights = [float(section.base) ** e for e in section.exponents]
        measures = [block_measure(mesh, left, right, w) for w in weights]
        reference = block_measure(mesh, left, right, np.inf) if section.compare_to_infinite else None
        rhs = [interpolate_expression(mesh, text) for text in section.rhs_expressions]
        report = await self._offload(
            gamma_sequence_test, G, M, measures, rhs, labels=section.rhs_expressions, reference=reference
        )
        result = GammaOutput(kind=cfg.space.kind.value, s=cfg.space.s, n=mesh.n_elems, weights=weights, report=report)

        out = self.output_dir(cfg)
        if "csv" in cfg.output.formats:
            write_gamma_csv(out / "gamma.csv", report)
        if "json" in cfg.output.formats:
            write_json(out / "gamma.json", result)
        return result

    @timed_async(logger, "cmd_reproduce_spaces")
    async def reproduce_spaces(self, cfg: ExperimentConfig) -> SpacesOutput:
        """Integral tilde vs spectral, then spectral again with α rescaled by the tilde solution."""
        mesh = self.mesh(cfg)
        M = mass_matrix(mesh)
        s = cfg.space.s
        G_tilde, G_spectral = await asyncio.gather(
            self._offload(assemble, SpaceKind.INTEGRAL_TILDE, mesh, s),
            self._offload(assemble, SpaceKind.SPECTRAL, mesh, s),
        )
        tilde_problem = self.problem(cfg, mesh, kind=SpaceKind.INTEGRAL_TILDE)
        spectral_problem = self.problem(cfg, mesh, kind=SpaceKind.SPECTRAL)
        (tilde, tilde_out), (spectral, spectral_out) = await asyncio.gather(
            self._offload(self._solve_one, "tilde", tilde_problem, G_tilde, M),
            self._offload(self._solve_one, "spectral", spectral_problem, G_spectral, M),
        )
        w_hat = tilde.w_K.values
        denom = float(w_hat @ G_spectral.matrix @ w_hat)
        if denom <= 0:
            raise ConfigError("tilde solution vanishes; the rescaled alpha is undefined", field="problem")
        rescaled_alpha = float(w_hat @ G_tilde.matrix @ w_hat) / denom
        rescaled_problem = self.problem(cfg, mesh, kind=SpaceKind.SPECTRAL, alpha=rescaled_alpha)
        rescaled, rescaled_out = await self._offload(self._solve_one, "spectral_rescaled", rescaled_problem, G_spectral, M)

        out = self.output_dir(cfg)
        reports = {"tilde": tilde, "spectral": spectral, "spectral_rescaled": rescaled}
        outputs = [tilde_out, spectral_out, rescaled_out]
        for output in outputs:
            self._write_run(cfg, out / output.run, reports[output.run], output)

        comparison = [
            _compare(a, reports[a].w_K.values, b, reports[b].w_K.values, M)
            for a, b in (("tilde", "spectral"), ("tilde", "spectral_rescaled"), ("spectral", "spectral_rescaled"))
        ]
        write_csv(
            out / "comparison.csv",
            ("first", "second", "normalized_correlation", "amplitude_ratio", "l2_difference"),
            ([r.first, r.second, r.normalized_correlation, r.amplitude_ratio, r.l2_difference] for r in comparison),
        )
        result = SpacesOutput(rescaled_alpha=rescaled_alpha, runs=outputs, comparison=comparison)
        if "json" in cfg.output.formats:
            write_json(out / "spaces.json", result)
        logger.info("spaces_compared rescaled_alpha=%.6g", rescaled_alpha)
        return result

    @timed_async(logger, "cmd_reproduce_p0")
    async def reproduce_p0(self, cfg: ExperimentConfig, *, with_continuation: bool = True) -> ZeroNormOutput:
        """p = 0 under both ε-schedules next to the p = 0.1 baseline, then the p → 0 continuation."""
        mesh = self.mesh(cfg)
        M = mass_matrix(mesh)
        G = await self._offload(assemble, cfg.space.kind, mesh, cfg.space.s)

        plan = [(f"p0_eps{factor:g}", 0.0, factor) for factor in ZERO_NORM_SCHEDULES]
        plan.append((f"p{ZERO_NORM_BASELINE_P:g}_eps{ZERO_NORM_SCHEDULES[0]:g}", ZERO_NORM_BASELINE_P, ZERO_NORM_SCHEDULES[0]))
        results = await asyncio.gather(
            *(
                self._offload(self._solve_one, run, self.problem(cfg, mesh, p=p, factor=factor), G, M)
                for run, p, factor in plan
            )
        )

        out = self.output_dir(cfg)
        supports = []
        for (run, p, factor), (report, output) in zip(plan, results):
            self._write_run(cfg, out / run, report, output)
            supports.append(
                SupportRow(
                    run=run,
                    p=p,
                    factor=factor,
                    support_measure=output.summary.support_w_measure,
                    support_nodes=output.summary.support_w_size,
                    max_abs_w=float(np.max(np.abs(report.w_K.values))),
                    converged=report.converged,
                    iterations=report.iterations,
                )
            )
        write_csv(
            out / "supports.csv",
            ("run", "p", "factor", "support_measure", "support_nodes", "max_abs_w", "converged", "iterations"),
            ([r.run, r.p, r.factor, r.support_measure, r.support_nodes, r.max_abs_w, r.converged, r.iterations]
             for r in supports),
        )

        continuation = None
        if with_continuation:
            section = cfg.continuation or ContinuationSection()
            base = self.problem(cfg, mesh, p=section.p_list[0])
            _, continuation = await self._offload(p_to_zero_continuation, base, section.p_list, G=G, M=M)
            write_csv(
                out / "continuation.csv",
                ("p", "lambda_w", "p_lp", "gap", "gap_ok", "support_measure", "converged", "iterations"),
                ([r.p, r.lambda_w, r.p_lp, r.gap, r.gap_ok, r.support_measure, r.converged, r.iterations]
                 for r in continuation.rows),
            )

        result = ZeroNormOutput(runs=[o for _, o in results], supports=supports, continuation=continuation)
        if "json" in cfg.output.formats:
            write_json(out / "p0.json", result)
        return result


def _compare(first: str, a: np.ndarray, second: str, b: np.ndarray, M: np.ndarray) -> ComparisonRow:
    na = float(np.sqrt(a @ M @ a))
    nb = float(np.sqrt(b @ M @ b))
    corr = float(a @ M @ b) / (na * nb) if na > 0 and nb > 0 else 0.0
    peak_b = float(np.max(np.abs(b)))
    d = a - b
    return ComparisonRow(
        first=first,
        second=second,
        normalized_correlation=corr,
        amplitude_ratio=float(np.max(np.abs(a))) / peak_b if peak_b > 0 else float("inf"),
        l2_difference=float(np.sqrt(d @ M @ d)),
    )


def schema_models() -> Dict[str, type[BaseModel]]:
    return {
        "config": ExperimentConfig,
        "assemble": AssembleOutput,
        "solve": SolveOutput,
        "capacity": CapacityOutput,
        "gamma": GammaOutput,
        "spaces": SpacesOutput,
        "p0": ZeroNormOutput,
    }
