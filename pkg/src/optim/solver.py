from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Sequence
import logging

import numpy as np
import scipy.linalg as scilin
from pydantic import BaseModel

from src.capacity.capacity_measures import NodalMeasure, relaxed_dirichlet_solve
from src.errors import ConfigError, NumericalError
from src.fem.core_fe import (
    DEFAULT_ZERO_REL,
    FeFunction,
    Mesh1D,
    ensure_same_mesh,
    lp_integral,
    lp_integral_lumped,
    lumped_masses,
    mass_matrix,
    relative_threshold,
    support,
)
from src.fem.frac_gram import GramOperator, SpaceKind, assemble, offered_kinds
from src.instrumentation import timed
from src.optim.smoothing import SmoothingFamily, g_eps_gauss, psi_prime, smoothed_objective

logger = logging.getLogger("fracap.solver")

# Relative closing tolerance of λ·w = p ∫|w|^p on converged runs.
GAP_REL_TOL = 1e-6


class TrackingFunctional:
    """F(w) = ½ (w - w_d)ᵀ M (w - w_d)."""

    is_quadratic = True

    def __init__(self, M: np.ndarray, target: np.ndarray):
        self.M = M
        self.target = np.asarray(target, dtype=float)

    def value(self, w: np.ndarray) -> float:
        d = w - self.target
        return float(0.5 * d @ self.M @ d)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.M @ (w - self.target)

    def hessian(self) -> np.ndarray:
        return self.M

    def load(self) -> np.ndarray:
        """-F'(0), the right-hand side of the reweighted systems."""
        return self.M @ self.target


@dataclass(frozen=True)
class ProblemConfig:
    alpha: float
    beta: float
    p: float
    s: float
    kind: SpaceKind
    mesh: Mesh1D
    w_d: FeFunction
    eps0: float = 1.0
    eps_factor: float = 0.5
    eps_min: float = 1e-8
    tol_step: float = 1e-10
    max_iter: int = 200
    init: Literal["target", "zero"] = "target"
    inner_max_iter: int = 1
    zero_rel: float = DEFAULT_ZERO_REL

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}", field="problem.alpha")
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}", field="problem.beta")
        if not (0.0 <= self.p < 1.0):
            raise ConfigError(f"p must lie in [0, 1), got {self.p}", field="problem.p")
        if self.kind not in offered_kinds(self.s):
            raise ConfigError(f"{self.kind.value} is not offered for s={self.s}", field="space.kind")
        if self.w_d.mesh != self.mesh:
            raise ConfigError("w_d lives on a different mesh", field="problem.w_d")
        if not self.eps0 > 0:
            raise ConfigError(f"eps0 must be positive, got {self.eps0}", field="schedule.eps0")
        if not (0.0 < self.eps_factor < 1.0):
            raise ConfigError(f"eps_factor must lie in (0, 1), got {self.eps_factor}", field="schedule.factor")
        if self.eps_min < 0:
            raise ConfigError(f"eps_min must be >= 0, got {self.eps_min}", field="schedule.eps_min")
        if self.tol_step < 0:
            raise ConfigError(f"tol_step must be >= 0, got {self.tol_step}", field="schedule.tol")
        if self.max_iter < 1 or self.inner_max_iter < 1:
            raise ConfigError("iteration limits must be >= 1", field="schedule.max_iter")
        if self.init not in ("target", "zero"):
            raise ConfigError(f"init must be 'target' or 'zero', got {self.init}", field="problem.init")

    @property
    def family(self) -> SmoothingFamily:
        return SmoothingFamily.for_p(self.p)


@dataclass
class SolveReport:
    w_K: FeFunction
    iterations: int
    eps_history: np.ndarray
    objective_history: np.ndarray
    step_history: np.ndarray
    lambda_K: np.ndarray
    mu_K: NodalMeasure
    z_K: FeFunction
    stationarity_residual: float
    complementarity_gap: float
    support_w: np.ndarray
    support_z: np.ndarray
    converged: bool
    eps_K: float
    mm_increases: int = 0
    smoothed_history: np.ndarray = field(default_factory=lambda: np.zeros(0))


class SolveSummary(BaseModel):
    """JSON form of a SolveReport: every scalar and every history."""

    converged: bool
    iterations: int
    eps_K: float
    stationarity_residual: float
    complementarity_gap: float
    support_w_size: int
    support_z_size: int
    support_w_measure: float
    mm_increases: int
    eps_history: List[float]
    objective_history: List[float]
    step_history: List[float]


class OptimalityReport(BaseModel):
    p: float
    stationarity_residual: float
    complementarity_value: float
    p_lp_lumped: float
    p_lp_gauss: float
    complementarity_gap: float
    complementarity_closed: Optional[bool] = None
    complementarity_nonnegative: bool
    support_w_size: int
    support_z_size: int
    jaccard: float
    support_inclusion: bool
    eta_min: float
    eta_nonnegative: bool
    mu_w_applicable: bool
    mu_w_max_rel_diff: Optional[float] = None
    trust_region: str = "not enforced"
    converged: bool
    iterations: int
    eps_K: float


class ContinuationRow(BaseModel):
    p: float
    lambda_w: float
    p_lp: float
    gap: float
    gap_ok: bool
    support_measure: float
    converged: bool
    iterations: int


class ContinuationReport(BaseModel):
    rows: List[ContinuationRow]
    monotone_decay: bool
    final_over_first: Optional[float]


def mu_from_solution(w: FeFunction, eps: float, p: float) -> NodalMeasure:
    """Weights 2ψ'_ε(w_i²): p·min(ε^{p-2}, |w_i|^{p-2}) or 2ε/(w_i²+ε)²."""
    weights = 2.0 * np.atleast_1d(psi_prime(SmoothingFamily.for_p(p), w.values**2, eps))
    return NodalMeasure(w.mesh, weights)


def multiplier_lambda(w: FeFunction, eps: float, p: float, M: np.ndarray) -> np.ndarray:
    """Nodal dual vector λ_i = m_i w_i μ_i."""
    m = lumped_masses(M)
    return m * w.values * mu_from_solution(w, eps, p).weights


def mu_from_multiplier(
    w: FeFunction,
    lam: np.ndarray,
    M: np.ndarray,
    *,
    tol: float = 1e-10,
    zero_threshold: float | None = None,
) -> Optional[NodalMeasure]:
    """dλ/dw on {w > 0} and ∞ on {w = 0}; None unless λ ≥ -tol and w ≥ -tol nodally."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < -tol) or np.any(w.values < -tol):
        return None
    if zero_threshold is None:
        zero_threshold = relative_threshold(w.values)
    m = lumped_masses(M)
    positive = w.values > zero_threshold
    weights = np.zeros_like(lam)
    weights[positive] = np.maximum(lam[positive], 0.0) / (m[positive] * w.values[positive])
    return NodalMeasure(w.mesh, weights, ~positive)


def stationarity_multiplier(cfg: ProblemConfig, w: np.ndarray, G: np.ndarray, M: np.ndarray) -> np.ndarray:
    """λ̄ = (1/β)(-F'(w) - αGw)."""
    return (M @ (cfg.w_d.values - w) - cfg.alpha * (G @ w)) / cfg.beta


def complementarity_terms(w: FeFunction, lam: np.ndarray, p: float, m: np.ndarray, eps: float) -> tuple[float, float]:
    """(λᵀw, p·Σ m_i |w_i|^p) with the nodes inside the smoothing radius counted as zeros.

    At |w_i| ≥ ε the multiplier gives λ_i w_i = p m_i |w_i|^p exactly. Below ε the
    pair is p m_i w_i² ε^{p-2}, which vanishes with ε, while |w_i|^p does not.
    """
    value = float(lam @ w.values)
    if p == 0.0:
        return value, 0.0
    return value, p * lp_integral_lumped(w, p, m, zero_threshold=eps)


def gap_tolerance(p_lp: float) -> float:
    return GAP_REL_TOL * (1.0 + abs(p_lp))


def _nonsmooth_objective(cfg: ProblemConfig, F: TrackingFunctional, G: np.ndarray, w: FeFunction) -> float:
    thr = relative_threshold(w.values, cfg.zero_rel) if cfg.p == 0.0 else 0.0
    return F.value(w.values) + 0.5 * cfg.alpha * float(w.values @ G @ w.values) + cfg.beta * lp_integral(
        w, cfg.p, thr
    )


def _scaled_torsion(G: GramOperator, M: np.ndarray, mu: NodalMeasure, alpha: float, beta: float) -> FeFunction:
    # α(z, v)_W + β∫ z v dμ = ∫ v
    return relaxed_dirichlet_solve(G.scaled(alpha), M, mu.scaled(beta), lumped_masses(M), description="torsion").w


def _jaccard(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def _initial(cfg: ProblemConfig, init: FeFunction | None) -> np.ndarray:
    if init is not None:
        ensure_same_mesh(cfg.mesh, init.mesh)
        return init.values.copy()
    if cfg.init == "zero":
        return np.zeros(cfg.mesh.interior_dof_count)
    return cfg.w_d.values.copy()


def _reweighted_solve(A0: np.ndarray, weights: np.ndarray, rhs: np.ndarray, k: int, eps: float) -> np.ndarray:
    A = A0 + np.diag(weights)
    try:
        return scilin.cho_solve(scilin.cho_factor(A, lower=True), rhs)
    except scilin.LinAlgError as e:
        raise NumericalError("dc_solve", "reweighted system not positive definite", {"k": k, "eps": eps}) from e


@timed(logger, "dc_solve")
def dc_solve(
    cfg: ProblemConfig,
    *,
    G: GramOperator | None = None,
    M: np.ndarray | None = None,
    init: FeFunction | None = None,
) -> SolveReport:
    """Reweighted quadratic iteration with a geometric ε-schedule.

    Each step solves (M + αG + 2β D_k) w = M w_d with D_k = diag(m_i ψ'_ε(w_i²))
    built from the previous iterate. ε is held for `inner_max_iter` solves (or until
    the step tolerance is met) before it is multiplied by `eps_factor`.
    """
    G = G if G is not None else assemble(cfg.kind, cfg.mesh, cfg.s)
    ensure_same_mesh(G.mesh, cfg.mesh)
    M = M if M is not None else mass_matrix(cfg.mesh)
    m = lumped_masses(M)
    family = cfg.family
    F = TrackingFunctional(M, cfg.w_d.values)
    rhs = F.load()
    A0 = F.hessian() + cfg.alpha * G.matrix
    eps_floor = cfg.eps_min * (1.0 + 1e-12)

    w = _initial(cfg, init)
    eps = max(cfg.eps0, cfg.eps_min)
    eps_hist: List[float] = []
    obj_hist: List[float] = []
    step_hist: List[float] = []
    smooth_hist: List[float] = []
    mm_increases = 0
    converged = False
    iterations = 0

    if not np.any(rhs):
        # Zero is the unique solution of every reweighted system.
        w = np.zeros_like(w)
        iterations = 1
        eps_hist.append(eps)
        step_hist.append(0.0)
        obj_hist.append(_nonsmooth_objective(cfg, F, G.matrix, FeFunction(cfg.mesh, w)))
        converged = True
    else:
        inner = 0
        while iterations < cfg.max_iter:
            weights = 2.0 * cfg.beta * m * np.atleast_1d(psi_prime(family, w**2, eps))
            w_new = _reweighted_solve(A0, weights, rhs, iterations, eps)
            step = G.norm(w_new - w)

            before = smoothed_objective(
                family, FeFunction(cfg.mesh, w), eps, alpha=cfg.alpha, beta=cfg.beta, G=G.matrix, M=M, target=F.target
            )
            after = smoothed_objective(
                family, FeFunction(cfg.mesh, w_new), eps, alpha=cfg.alpha, beta=cfg.beta, G=G.matrix, M=M, target=F.target
            )
            if after > before + 1e-12 * max(abs(before), 1.0):
                mm_increases += 1
            smooth_hist.append(after)

            w = w_new
            iterations += 1
            inner += 1
            eps_hist.append(eps)
            step_hist.append(step)
            obj_hist.append(_nonsmooth_objective(cfg, F, G.matrix, FeFunction(cfg.mesh, w)))
            logger.debug("dc_iteration k=%d eps=%.1e step=%.1e", iterations, eps, step)

            if step <= cfg.tol_step and eps <= eps_floor:
                converged = True
                break
            if inner >= cfg.inner_max_iter or step <= cfg.tol_step:
                eps = max(cfg.eps_min, cfg.eps_factor * eps)
                inner = 0

    eps_K = eps_hist[-1]
    w_K = FeFunction(cfg.mesh, w)
    mu_K = mu_from_solution(w_K, eps_K, cfg.p)
    lam = multiplier_lambda(w_K, eps_K, cfg.p, M)
    residual = G.dual_norm(cfg.alpha * (G.matrix @ w) + cfg.beta * lam + F.gradient(w))
    lam_w, p_lp = complementarity_terms(w_K, lam, cfg.p, m, eps_K)
    gap = lam_w - p_lp
    z_K = _scaled_torsion(G, M, mu_K, cfg.alpha, cfg.beta)

    if not converged:
        logger.warning("dc_not_converged max_iter=%d eps=%.1e step=%.1e", cfg.max_iter, eps_K, step_hist[-1])
    logger.info(
        "dc_solve_done p=%g kind=%s n=%d iterations=%d converged=%s residual=%.2e",
        cfg.p, cfg.kind.value, cfg.mesh.n_elems, iterations, converged, residual,
    )
    return SolveReport(
        w_K=w_K,
        iterations=iterations,
        eps_history=np.asarray(eps_hist),
        objective_history=np.asarray(obj_hist),
        step_history=np.asarray(step_hist),
        lambda_K=lam,
        mu_K=mu_K,
        z_K=z_K,
        stationarity_residual=residual,
        complementarity_gap=gap,
        support_w=support(w_K, relative_threshold(w, cfg.zero_rel)),
        support_z=support(z_K, relative_threshold(z_K.values, cfg.zero_rel)),
        converged=converged,
        eps_K=eps_K,
        mm_increases=mm_increases,
        smoothed_history=np.asarray(smooth_hist),
    )


def summarize(cfg: ProblemConfig, report: SolveReport) -> SolveSummary:
    thr = relative_threshold(report.w_K.values, cfg.zero_rel)
    return SolveSummary(
        converged=report.converged,
        iterations=report.iterations,
        eps_K=report.eps_K,
        stationarity_residual=report.stationarity_residual,
        complementarity_gap=report.complementarity_gap,
        support_w_size=int(np.count_nonzero(report.support_w)),
        support_z_size=int(np.count_nonzero(report.support_z)),
        support_w_measure=lp_integral(report.w_K, 0.0, thr),
        mm_increases=report.mm_increases,
        eps_history=report.eps_history.tolist(),
        objective_history=report.objective_history.tolist(),
        step_history=report.step_history.tolist(),
    )


def optimality_report(
    cfg: ProblemConfig,
    report: SolveReport,
    G: GramOperator,
    M: np.ndarray,
    *,
    tol: float = 1e-10,
) -> OptimalityReport:
    ensure_same_mesh(cfg.mesh, G.mesh, report.w_K.mesh)
    w = report.w_K.values
    m = lumped_masses(M)
    lam = report.lambda_K
    residual = G.dual_norm(cfg.alpha * (G.matrix @ w) + cfg.beta * lam + M @ (w - cfg.w_d.values))
    value, p_lp = complementarity_terms(report.w_K, lam, cfg.p, m, report.eps_K)
    p_lp_gauss = cfg.p * lp_integral(report.w_K, cfg.p) if cfg.p > 0 else 0.0

    eta = (m - cfg.alpha * (G.matrix @ report.z_K.values)) / cfg.beta
    checkable = ~report.mu_K.infinite_set
    eta_min = float(eta[checkable].min()) if np.any(checkable) else 0.0

    lam_bar = stationarity_multiplier(cfg, w, G.matrix, M)
    mu_w = mu_from_multiplier(report.w_K, lam_bar, M, tol=tol)
    rel_diff = None
    if mu_w is not None:
        on = report.support_w & ~mu_w.infinite_set
        if np.any(on):
            a, b = mu_w.weights[on], report.mu_K.weights[on]
            rel_diff = float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))

    both = report.support_w & report.support_z
    return OptimalityReport(
        p=cfg.p,
        stationarity_residual=residual,
        complementarity_value=value,
        p_lp_lumped=p_lp,
        p_lp_gauss=p_lp_gauss,
        complementarity_gap=value - p_lp,
        complementarity_closed=abs(value - p_lp) <= gap_tolerance(p_lp) if cfg.p > 0 else None,
        complementarity_nonnegative=value >= -tol,
        support_w_size=int(np.count_nonzero(report.support_w)),
        support_z_size=int(np.count_nonzero(report.support_z)),
        jaccard=_jaccard(report.support_w, report.support_z),
        support_inclusion=bool(np.array_equal(both, report.support_w)),
        eta_min=eta_min,
        eta_nonnegative=eta_min >= -tol * max(1.0, float(m.max())),
        mu_w_applicable=mu_w is not None,
        mu_w_max_rel_diff=rel_diff,
        converged=report.converged,
        iterations=report.iterations,
        eps_K=report.eps_K,
    )


def smoothed_gauss_value(cfg: ProblemConfig, report: SolveReport) -> float:
    """G_ε(w_K) by consistent quadrature, reported next to the lumped value."""
    return g_eps_gauss(cfg.family, report.w_K, report.eps_K)


def p_to_zero_continuation(
    cfg: ProblemConfig,
    p_list: Sequence[float],
    *,
    G: GramOperator | None = None,
    M: np.ndarray | None = None,
) -> tuple[List[SolveReport], ContinuationReport]:
    """Warm-started solves along a decreasing list of positive p.

    Each converged run must close λᵀw = p Σ m_i |w_i|^p within gap_tolerance;
    runs stopped at max_iter are recorded with gap_ok set from the same test.
    """
    p_list = list(p_list)
    if not p_list:
        raise ConfigError("continuation needs at least one p", field="continuation.p_list")
    if any(p <= 0 or p >= 1 for p in p_list):
        raise ConfigError("continuation p values must lie in (0, 1)", field="continuation.p_list")
    if any(b >= a for a, b in zip(p_list, p_list[1:])):
        raise ConfigError("continuation p list must be strictly decreasing", field="continuation.p_list")

    G = G if G is not None else assemble(cfg.kind, cfg.mesh, cfg.s)
    M = M if M is not None else mass_matrix(cfg.mesh)
    m = lumped_masses(M)
    reports: List[SolveReport] = []
    rows: List[ContinuationRow] = []
    warm: FeFunction | None = None
    for p in p_list:
        run_cfg = _with_p(cfg, p)
        rep = dc_solve(run_cfg, G=G, M=M, init=warm)
        warm = rep.w_K
        lam_w, p_lp = complementarity_terms(rep.w_K, rep.lambda_K, p, m, rep.eps_K)
        gap = lam_w - p_lp
        if rep.converged and abs(gap) > gap_tolerance(p_lp):
            raise NumericalError(
                "continuation",
                "complementarity identity not closed",
                {"p": p, "lambda_w": lam_w, "p_lp": p_lp, "gap": gap},
            )
        rows.append(
            ContinuationRow(
                p=p,
                lambda_w=lam_w,
                p_lp=p_lp,
                gap=gap,
                gap_ok=abs(gap) <= gap_tolerance(p_lp),
                support_measure=lp_integral(rep.w_K, 0.0, relative_threshold(rep.w_K.values, cfg.zero_rel)),
                converged=rep.converged,
                iterations=rep.iterations,
            )
        )
        reports.append(rep)
        logger.info("continuation_step p=%g lambda_w=%.6e gap=%.2e", p, lam_w, gap)

    values = [r.lambda_w for r in rows]
    first = values[0]
    return reports, ContinuationReport(
        rows=rows,
        monotone_decay=all(b <= a for a, b in zip(values, values[1:])),
        final_over_first=(values[-1] / first) if first > 0 else None,
    )


def _with_p(cfg: ProblemConfig, p: float) -> ProblemConfig:
    return replace(cfg, p=p)
