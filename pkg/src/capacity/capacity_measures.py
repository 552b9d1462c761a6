from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np
import scipy.linalg as scilin
from pydantic import BaseModel

from src.errors import ConfigError, MeshMismatchError, NumericalError
from src.fem.core_fe import DEFAULT_ZERO_REL, FeFunction, Mesh1D, ensure_same_mesh, lumped_masses
from src.fem.frac_gram import GramOperator
from src.instrumentation import timed

logger = logging.getLogger("fracap.capacity")


@dataclass(frozen=True)
class NodalMeasure:
    """Lumped nodal density of a capacitary measure plus the nodes where it is infinite."""

    mesh: Mesh1D
    weights: np.ndarray
    infinite_set: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        n = self.mesh.interior_dof_count
        weights = np.array(self.weights, dtype=float)
        infinite = (
            np.zeros(n, dtype=bool) if self.infinite_set is None else np.array(self.infinite_set, dtype=bool)
        )
        if weights.shape != (n,) or infinite.shape != (n,):
            raise ConfigError(f"measure arrays must have length {n}", field="measure")
        finite = ~infinite
        if np.any(weights[finite] < 0) or not np.all(np.isfinite(weights[finite])):
            raise ConfigError("measure weights must be finite and nonnegative off the infinite set", field="measure")
        weights = np.where(infinite, np.inf, weights)
        weights.setflags(write=False)
        infinite.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "infinite_set", infinite)

    @staticmethod
    def zero(mesh: Mesh1D) -> "NodalMeasure":
        return NodalMeasure(mesh, np.zeros(mesh.interior_dof_count))

    def scaled(self, factor: float) -> "NodalMeasure":
        finite = np.where(self.infinite_set, 0.0, self.weights)
        return NodalMeasure(self.mesh, factor * finite, self.infinite_set)

    def finite_weights(self) -> np.ndarray:
        return np.where(self.infinite_set, 0.0, self.weights)


@dataclass(frozen=True)
class RelaxedDirichletSolution:
    w: FeFunction
    measure: NodalMeasure
    rhs_description: str
    residual_norm: float
    energy: float
    rhs_dual_norm: float
    energy_identity_error: float

    @property
    def apriori_bound_holds(self) -> bool:
        return np.sqrt(self.energy) <= self.rhs_dual_norm + 1e-10


@dataclass(frozen=True)
class CapacityResult:
    value: float
    minimizer: FeFunction
    bounded_0_1: bool


class MembershipReport(BaseModel):
    member: bool
    min_value: float
    min_slack: float
    slack: List[float]


class GammaRow(BaseModel):
    k: int
    z_diff_l2: float
    w_diff_l2: List[float]
    z_l2: float
    apriori_ok: bool


class GammaReport(BaseModel):
    rows: List[GammaRow]
    rhs_labels: List[str]
    z_cauchy: bool
    all_f_cauchy: bool
    verdict: bool
    empirical_constant: float


def _as_rhs(M: np.ndarray, f: FeFunction | np.ndarray) -> Tuple[np.ndarray, str]:
    if isinstance(f, FeFunction):
        return M @ f.values, "function"
    return np.asarray(f, dtype=float), "dual"


def relaxed_dirichlet_solve(
    G: GramOperator,
    M: np.ndarray,
    mu: NodalMeasure,
    f: FeFunction | np.ndarray,
    *,
    description: str | None = None,
) -> RelaxedDirichletSolution:
    """Solve (w, v)_W + ∫ w v dμ = ⟨f, v⟩ with w = 0 on the infinite set of μ."""
    ensure_same_mesh(G.mesh, mu.mesh)
    if isinstance(f, FeFunction):
        ensure_same_mesh(G.mesh, f.mesh)
    rhs, rhs_kind = _as_rhs(M, f)
    if rhs.shape != (G.size,):
        raise MeshMismatchError(f"rhs of length {rhs.shape} does not match {G.size} unknowns")

    A = G.matrix + np.diag(mu.finite_weights() * lumped_masses(M))
    free = ~mu.infinite_set
    w = np.zeros(G.size)
    if np.any(free):
        A_ff = A[np.ix_(free, free)]
        try:
            w[free] = scilin.cho_solve(scilin.cho_factor(A_ff, lower=True), rhs[free])
        except scilin.LinAlgError as e:
            raise NumericalError("relaxed_dirichlet", "singular reduced system", {"free": int(free.sum())}) from e
        resid = A_ff @ w[free] - rhs[free]
        residual = float(np.linalg.norm(resid) / max(np.linalg.norm(rhs[free]), 1e-300))
    else:
        residual = 0.0

    energy = float(w @ G.matrix @ w)
    measure_energy = float(w @ (mu.finite_weights() * lumped_masses(M) * w))
    work = float(rhs @ w)
    identity_error = abs(energy + measure_energy - work) / max(abs(work), 1e-300)
    dual = G.dual_norm(rhs)
    logger.debug(
        "relaxed_dirichlet_solved free=%d residual=%.3e energy=%.6e dual=%.6e",
        int(free.sum()), residual, energy, dual,
    )
    return RelaxedDirichletSolution(
        w=FeFunction(G.mesh, w),
        measure=mu,
        rhs_description=description or rhs_kind,
        residual_norm=residual,
        energy=energy,
        rhs_dual_norm=dual,
        energy_identity_error=identity_error if work else 0.0,
    )


def torsion_z(G: GramOperator, M: np.ndarray, mu: NodalMeasure, scale: float = 1.0) -> RelaxedDirichletSolution:
    """Relaxed Dirichlet solution for f ≡ scale."""
    return relaxed_dirichlet_solve(G, M, mu, scale * lumped_masses(M), description="torsion")


def capacity(G: GramOperator, K_nodes: Iterable[int] | np.ndarray) -> CapacityResult:
    """min wᵀGw subject to w = 1 on K_nodes."""
    n = G.size
    pinned = _node_mask(n, K_nodes)
    if not np.any(pinned):
        return CapacityResult(0.0, FeFunction(G.mesh, np.zeros(n)), True)
    w = np.zeros(n)
    w[pinned] = 1.0
    free = ~pinned
    if np.any(free):
        G_ff = G.matrix[np.ix_(free, free)]
        G_fk = G.matrix[np.ix_(free, pinned)]
        try:
            w[free] = scilin.cho_solve(scilin.cho_factor(G_ff, lower=True), -G_fk.sum(axis=1))
        except scilin.LinAlgError as e:
            raise NumericalError("capacity", "singular reduced system", {"pinned": int(pinned.sum())}) from e
    value = float(w @ G.matrix @ w)
    bounded = bool(np.all(w >= -1e-12) and np.all(w <= 1.0 + 1e-12))
    return CapacityResult(value, FeFunction(G.mesh, w), bounded)


def _node_mask(n: int, nodes: Iterable[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(nodes)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ConfigError(f"node mask must have length {n}", field="K_nodes")
        return arr.copy()
    mask = np.zeros(n, dtype=bool)
    idx = arr.astype(int).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ConfigError("node index outside the interior nodes", field="K_nodes")
    mask[idx] = True
    return mask


def nodes_in_interval(mesh: Mesh1D, left: float, right: float) -> np.ndarray:
    """Indices of interior nodes x with left <= x < right."""
    x = mesh.interior_nodes
    return np.flatnonzero((x >= left) & (x < right))


def nodes_in_intervals(mesh: Mesh1D, intervals: Sequence[Tuple[float, float]]) -> np.ndarray:
    mask = np.zeros(mesh.interior_dof_count, dtype=bool)
    for left, right in intervals:
        mask[nodes_in_interval(mesh, left, right)] = True
    return np.flatnonzero(mask)


def check_K_membership(G: GramOperator, M: np.ndarray, z: FeFunction, tol: float = 1e-10) -> MembershipReport:
    """z ∈ 𝒦(Ω) on the discrete space: z ≥ 0 nodally and (Gz)_i ≤ (M1)_i for every hat."""
    ensure_same_mesh(G.mesh, z.mesh)
    slack = lumped_masses(M) - G.matrix @ z.values
    member = bool(np.all(z.values >= -tol) and np.all(slack >= -tol))
    return MembershipReport(
        member=member,
        min_value=float(z.values.min()),
        min_slack=float(slack.min()),
        slack=slack.tolist(),
    )


def measure_from_z(
    G: GramOperator,
    M: np.ndarray,
    z: FeFunction,
    zero_threshold: float | None = None,
    *,
    tol: float | None = None,
) -> NodalMeasure:
    """Reconstruct μ = η / z (∞ on {z = 0}) with η = M1 - Gz.

    Slack is only required on nodes where z is above the threshold; on the
    infinite set η carries no information about μ.
    """
    m = lumped_masses(M)
    if tol is None:
        tol = 1e-8 * float(m.max())
    if zero_threshold is None:
        zero_threshold = DEFAULT_ZERO_REL * float(np.max(np.abs(z.values)))
    report = check_K_membership(G, M, z, tol)
    eta = np.asarray(report.slack)
    infinite = z.values <= zero_threshold
    positive = ~infinite
    min_slack = float(eta[positive].min()) if np.any(positive) else 0.0
    if report.min_value < -tol or min_slack < -tol:
        raise NumericalError(
            "measure_from_z",
            "z is not in K(Omega)",
            {"min_value": report.min_value, "min_slack": min_slack, "tol": tol},
        )
    weights = np.zeros_like(eta)
    weights[positive] = np.maximum(eta[positive], 0.0) / (m[positive] * z.values[positive])
    return NodalMeasure(z.mesh, weights, infinite)


def comparison_principle_check(
    G: GramOperator,
    M: np.ndarray,
    instances: int,
    rng: np.random.Generator,
    *,
    tol: float = 1e-8,
) -> List[int]:
    """Nodes where w₁ ≤ w₂ fails on random (0 ≤ f₁ ≤ f₂, μ₂ ≤ μ₁) instances."""
    n = G.size
    violating: set[int] = set()
    for _ in range(instances):
        f1 = rng.uniform(0.0, 1.0, n)
        f2 = f1 + rng.uniform(0.0, 1.0, n)
        mu2 = rng.uniform(0.0, 5.0, n)
        mu1 = mu2 + rng.uniform(0.0, 5.0, n)
        w1 = relaxed_dirichlet_solve(G, M, NodalMeasure(G.mesh, mu1), M @ f1).w.values
        w2 = relaxed_dirichlet_solve(G, M, NodalMeasure(G.mesh, mu2), M @ f2).w.values
        violating.update(np.flatnonzero(w1 > w2 + tol).tolist())
    if violating:
        logger.info("comparison_violations kind=%s count=%d", G.kind.value, len(violating))
    return sorted(violating)


class CapacityChecks(BaseModel):
    pairs: int
    monotone_violations: int
    subadditive_violations: int
    max_monotone_excess: float
    max_subadditive_excess: float


def _random_block(n: int, rng: np.random.Generator) -> Tuple[int, int]:
    lo = int(rng.integers(0, n))
    hi = int(rng.integers(lo + 1, n + 1))
    return lo, hi


def capacity_property_checks(
    G: GramOperator, pairs: int, rng: np.random.Generator, *, tol: float = 1e-10
) -> CapacityChecks:
    """Monotonicity on random nested node blocks and subadditivity on random block pairs."""
    n = G.size
    mono = sub = 0
    mono_excess = sub_excess = 0.0
    for _ in range(pairs):
        lo, hi = _random_block(n, rng)
        outer_lo = int(rng.integers(0, lo + 1))
        outer_hi = int(rng.integers(hi, n + 1))
        inner = capacity(G, np.arange(lo, hi)).value
        outer = capacity(G, np.arange(outer_lo, outer_hi)).value
        mono_excess = max(mono_excess, inner - outer)
        mono += inner > outer + tol

        k1 = np.arange(*_random_block(n, rng))
        k2 = np.arange(*_random_block(n, rng))
        union = capacity(G, np.union1d(k1, k2)).value
        excess = union - capacity(G, k1).value - capacity(G, k2).value
        sub_excess = max(sub_excess, excess)
        sub += excess > tol
    return CapacityChecks(
        pairs=pairs,
        monotone_violations=int(mono),
        subadditive_violations=int(sub),
        max_monotone_excess=float(mono_excess),
        max_subadditive_excess=float(sub_excess),
    )


def capacity_refinement_table(
    assemble_gram: Callable[[Mesh1D], GramOperator],
    a: float,
    b: float,
    sizes: Sequence[int],
    intervals: Sequence[Tuple[float, float]],
) -> List[Tuple[int, int, float]]:
    """(n, node count, capacity) of a fixed interval set on refining meshes."""
    rows = []
    for n in sizes:
        mesh = Mesh1D(a, b, n)
        nodes = nodes_in_intervals(mesh, intervals)
        rows.append((n, int(nodes.size), capacity(assemble_gram(mesh), nodes).value))
    return rows


def _l2(M: np.ndarray, v: np.ndarray) -> float:
    return float(np.sqrt(max(v @ M @ v, 0.0)))


@timed(logger, "gamma_sequence_test")
def gamma_sequence_test(
    G: GramOperator,
    M: np.ndarray,
    mu_seq: Sequence[NodalMeasure],
    f_list: Sequence[FeFunction | np.ndarray],
    *,
    labels: Sequence[str] | None = None,
    reference: NodalMeasure | None = None,
) -> GammaReport:
    """Compare torsion functions and relaxed Dirichlet solutions along a sequence of measures.

    Differences are taken against the last measure of the sequence, or against
    `reference` when given (e.g. the infinite-block limit).
    """
    if len(mu_seq) < 2:
        raise ConfigError("gamma sequence needs at least two measures", field="gamma.measures")
    if len(f_list) < 1:
        raise ConfigError("gamma sequence needs at least one right-hand side", field="gamma.rhs")
    for mu in mu_seq:
        if mu.mesh != G.mesh:
            raise MeshMismatchError("measure mesh differs from the Gram operator mesh")
    labels = list(labels) if labels is not None else [f"f{i}" for i in range(len(f_list))]

    target = reference if reference is not None else mu_seq[-1]
    z_ref = torsion_z(G, M, target).w.values
    w_ref = [relaxed_dirichlet_solve(G, M, target, f).w.values for f in f_list]

    rows: List[GammaRow] = []
    for k, mu in enumerate(mu_seq):
        z_sol = torsion_z(G, M, mu)
        sols = [relaxed_dirichlet_solve(G, M, mu, f) for f in f_list]
        rows.append(
            GammaRow(
                k=k,
                z_diff_l2=_l2(M, z_sol.w.values - z_ref),
                w_diff_l2=[_l2(M, s.w.values - r) for s, r in zip(sols, w_ref)],
                z_l2=_l2(M, z_sol.w.values),
                apriori_ok=all(s.apriori_bound_holds for s in [z_sol, *sols]),
            )
        )

    z_tail = [r.z_diff_l2 for r in rows]
    z_cauchy = _is_decaying(z_tail)
    all_f = all(_is_decaying([r.w_diff_l2[j] for r in rows]) for j in range(len(f_list)))
    ratios = [
        max(r.w_diff_l2) / r.z_diff_l2 for r in rows if r.z_diff_l2 > 0 and max(r.w_diff_l2) > 0
    ]
    report = GammaReport(
        rows=rows,
        rhs_labels=labels,
        z_cauchy=z_cauchy,
        all_f_cauchy=all_f,
        verdict=(not z_cauchy) or all_f,
        empirical_constant=max(ratios) if ratios else 0.0,
    )
    logger.info(
        "gamma_sequence measures=%d rhs=%d z_cauchy=%s all_f_cauchy=%s C=%.4g",
        len(mu_seq), len(f_list), z_cauchy, all_f, report.empirical_constant,
    )
    return report


def _is_decaying(values: Sequence[float], atol: float = 1e-14) -> bool:
    # Tail ratio: the last difference is small against the first and the sequence never grows.
    if values[0] <= atol:
        return all(v <= atol for v in values)
    non_increasing = all(b <= a + atol for a, b in zip(values, values[1:]))
    return non_increasing and values[-1] <= 0.5 * values[0]


def block_measure(mesh: Mesh1D, left: float, right: float, weight: float) -> NodalMeasure:
    """weight on the interior nodes of [left, right), zero elsewhere; weight = inf pins the block."""
    w = np.zeros(mesh.interior_dof_count)
    infinite = np.zeros_like(w, dtype=bool)
    idx = nodes_in_interval(mesh, left, right)
    if np.isinf(weight):
        infinite[idx] = True
    else:
        w[idx] = weight
    return NodalMeasure(mesh, w, infinite)
