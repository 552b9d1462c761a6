from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Tuple
import logging

import numpy as np
import scipy.linalg as scilin
from scipy.special import gamma

from src.errors import ConfigError, NumericalError
from src.fem.core_fe import FeFunction, Mesh1D, ensure_same_mesh, mass_matrix, stiffness_matrix
from src.instrumentation import timed

logger = logging.getLogger("fracap.fem")

# Tensor Gauss order for element pairs at least one element apart.
FAR_ORDER = 5
# Gauss order of the one-dimensional integral left after the Duffy transform on touching pairs.
NEAR_ORDER = 16
# Gauss order of the exterior density on elements away from the endpoints.
EXTERIOR_ORDER = 10


class SpaceKind(str, Enum):
    INTEGRAL_TILDE = "IntegralTilde"
    INTEGRAL_OMEGA = "IntegralOmega"
    SPECTRAL = "Spectral"

    @property
    def is_integral(self) -> bool:
        return self is not SpaceKind.SPECTRAL


@dataclass(frozen=True)
class GramOperator:
    """Dense SPD matrix of a W-inner product on the interior P1 space."""

    kind: SpaceKind
    s: float
    mesh: Mesh1D
    matrix: np.ndarray = field(repr=False, compare=False)
    c_ds: float | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def cholesky(self) -> Tuple[np.ndarray, bool]:
        try:
            return scilin.cho_factor(self.matrix, lower=True)
        except scilin.LinAlgError as e:
            raise NumericalError("cholesky", str(e), {"kind": self.kind.value, "s": self.s}) from e

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scilin.cho_solve(self.cholesky, rhs)

    def norm(self, w: np.ndarray) -> float:
        return float(np.sqrt(max(w @ self.matrix @ w, 0.0)))

    def dual_norm(self, r: np.ndarray) -> float:
        """‖r‖ in the G⁻¹-dual norm, sqrt(rᵀ G⁻¹ r)."""
        return float(np.sqrt(max(r @ self.solve(r), 0.0)))

    def scaled(self, factor: float) -> "GramOperator":
        return replace(self, matrix=factor * self.matrix)


def c_ds(d: int, s: float) -> float:
    """Normalization constant of the integral fractional Laplacian in dimension d."""
    if not (0.0 < s < 1.0):
        raise ConfigError(f"s must lie in (0, 1), got {s}", field="s")
    if d < 1:
        raise ConfigError(f"dimension must be positive, got {d}", field="d")
    return float(s * 2.0 ** (2 * s) * gamma(s + d / 2.0) / (np.pi ** (d / 2.0) * gamma(1.0 - s)))


def offered_kinds(s: float) -> List[SpaceKind]:
    """Space kinds giving an H^s_0-equivalent norm at this s."""
    if not (0.0 < s < 1.0):
        raise ConfigError(f"s must lie in (0, 1), got {s}", field="s")
    if s == 0.5:
        raise ConfigError("s = 1/2 is not supported", field="s")
    if s < 0.5:
        return [SpaceKind.INTEGRAL_TILDE, SpaceKind.INTEGRAL_OMEGA, SpaceKind.SPECTRAL]
    return [SpaceKind.INTEGRAL_TILDE, SpaceKind.SPECTRAL]


def _check_integral_s(s: float, kind: SpaceKind) -> None:
    if kind not in offered_kinds(s):
        raise ConfigError(f"{kind.value} is not offered for s={s}", field="space.kind")


def _reference_same(s: float) -> np.ndarray:
    # ∬_{[0,1]²} |ξ-η|^{1-2s} times the pattern of (φ(x)-φ(y)) on one element.
    c0 = 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s))
    return c0 * np.array([[1.0, -1.0], [-1.0, 1.0]])


def _reference_touching(s: float) -> np.ndarray:
    # Duffy split of the unit square into the two triangles meeting at the shared vertex;
    # the radial integral is exactly 1/(3-2s), the angular one is smooth.
    v, wv = np.polynomial.legendre.leggauss(NEAR_ORDER)
    v = 0.5 * (v + 1.0)
    wv = 0.5 * wv
    kern = wv * (1.0 + v) ** (-1.0 - 2.0 * s)
    d1 = np.stack([np.ones_like(v), v - 1.0, -v])
    d2 = np.stack([v, 1.0 - v, -np.ones_like(v)])
    angular = np.einsum("aq,bq,q->ab", d1, d1, kern) + np.einsum("aq,bq,q->ab", d2, d2, kern)
    return angular / (3.0 - 2.0 * s)


def _reference_far(s: float, offsets: np.ndarray) -> np.ndarray:
    # Tensor Gauss on element pairs separated by offsets >= 2 (reference units).
    q, wq = np.polynomial.legendre.leggauss(FAR_ORDER)
    q = 0.5 * (q + 1.0)
    wq = 0.5 * wq
    xi, eta = np.meshgrid(q, q, indexing="ij")
    weights = np.outer(wq, wq)
    diff = np.stack([1.0 - xi, xi, -(1.0 - eta), -eta])
    r = offsets[:, None, None] + eta[None, :, :] - xi[None, :, :]
    kern = weights[None, :, :] * r ** (-1.0 - 2.0 * s)
    return np.einsum("aij,bij,dij->dab", diff, diff, kern)


def _pair_form(mesh: Mesh1D, s: float) -> np.ndarray:
    """∬_{Ω×Ω} (φ_i(x)-φ_i(y))(φ_j(x)-φ_j(y)) |x-y|^{-1-2s} over all nodes, boundary included."""
    n = mesh.n_elems
    scale = mesh.h ** (1.0 - 2.0 * s)
    B = np.zeros((n + 1, n + 1))
    upper = np.zeros((n + 1, n + 1))
    elems = np.arange(n)

    a0 = scale * _reference_same(s)
    for a in range(2):
        for b in range(2):
            B[elems + a, elems + b] += a0[a, b]

    a1 = scale * _reference_touching(s)
    if not np.all(np.isfinite(a1)):
        raise NumericalError("assembly", "non-finite touching-pair integral", {"offset": 1})
    k1 = np.arange(n - 1)
    for a in range(3):
        for b in range(3):
            upper[k1 + a, k1 + b] += a1[a, b]

    if n > 2:
        offsets = np.arange(2, n)
        far = scale * _reference_far(s, offsets.astype(float))
        bad = ~np.all(np.isfinite(far), axis=(1, 2))
        if np.any(bad):
            raise NumericalError(
                "assembly", "non-finite far-pair integral", {"offsets": offsets[bad].tolist()}
            )
        for idx, d in enumerate(offsets):
            k = np.arange(n - d)
            dofs = (k, k + 1, k + d, k + d + 1)
            for a in range(4):
                for b in range(4):
                    upper[dofs[a], dofs[b]] += far[idx, a, b]

    return B + (upper + upper.T)


def _exterior_form(mesh: Mesh1D, s: float) -> np.ndarray:
    """∫_Ω φ_i φ_j ρ dx with ρ(x) = ((x-a)^{-2s} + (b-x)^{-2s}) / (2s), interior nodes."""
    n = mesh.n_elems
    h = mesh.h
    q, wq = np.polynomial.legendre.leggauss(EXTERIOR_ORDER)
    q = 0.5 * (q + 1.0)
    wq = 0.5 * wq
    shape = np.stack([1.0 - q, q])
    k = np.arange(n, dtype=float)[:, None]
    with np.errstate(divide="ignore"):
        left = (k + q[None, :]) ** (-2.0 * s)
        right = (n - k - q[None, :]) ** (-2.0 * s)
    # Endpoint elements: the singular factor only meets the interior hat, ∫ξ^{2-2s} = 1/(3-2s).
    left[0, :] = 0.0
    right[-1, :] = 0.0
    local = np.einsum("aq,bq,kq->kab", shape, shape, (left + right) * wq[None, :])
    local[0, 1, 1] += 1.0 / (3.0 - 2.0 * s)
    local[-1, 0, 0] += 1.0 / (3.0 - 2.0 * s)
    E = np.zeros((n + 1, n + 1))
    elems = np.arange(n)
    for a in range(2):
        for b in range(2):
            E[elems + a, elems + b] += local[:, a, b]
    E *= h ** (1.0 - 2.0 * s) / (2.0 * s)
    return E[1:-1, 1:-1]


def _integral_matrix(mesh: Mesh1D, s: float, exterior: bool) -> Tuple[np.ndarray, float]:
    c = c_ds(1, s)
    G = mass_matrix(mesh) + 0.5 * c * _pair_form(mesh, s)[1:-1, 1:-1]
    if exterior:
        G = G + c * _exterior_form(mesh, s)
    return G, c


@timed(logger, "assemble_integral_tilde")
def assemble_integral_tilde(mesh: Mesh1D, s: float) -> GramOperator:
    _check_integral_s(s, SpaceKind.INTEGRAL_TILDE)
    G, c = _integral_matrix(mesh, s, exterior=True)
    logger.info("gram_assembled kind=IntegralTilde s=%.4g n=%d", s, mesh.n_elems)
    return GramOperator(SpaceKind.INTEGRAL_TILDE, s, mesh, G, c)


@timed(logger, "assemble_integral_omega")
def assemble_integral_omega(mesh: Mesh1D, s: float) -> GramOperator:
    _check_integral_s(s, SpaceKind.INTEGRAL_OMEGA)
    G, c = _integral_matrix(mesh, s, exterior=False)
    logger.info("gram_assembled kind=IntegralOmega s=%.4g n=%d", s, mesh.n_elems)
    return GramOperator(SpaceKind.INTEGRAL_OMEGA, s, mesh, G, c)


def spectral_eigenpairs(mesh: Mesh1D) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized eigenpairs K Φ = M Φ Λ, Φ M-orthonormal, eigenvalues ascending."""
    try:
        lam, phi = scilin.eigh(stiffness_matrix(mesh), mass_matrix(mesh))
    except scilin.LinAlgError as e:
        raise NumericalError("eigensolve", str(e), {"n": mesh.n_elems}) from e
    return lam, phi


@timed(logger, "assemble_spectral")
def assemble_spectral(mesh: Mesh1D, s: float) -> GramOperator:
    if not (0.0 <= s <= 1.0):
        raise ConfigError(f"spectral s must lie in [0, 1], got {s}", field="s")
    lam, phi = spectral_eigenpairs(mesh)
    if np.any(lam <= 0):
        raise NumericalError("eigensolve", "non-positive Dirichlet eigenvalue", {"min": float(lam.min())})
    mphi = mass_matrix(mesh) @ phi
    G = (mphi * lam**s) @ mphi.T
    G = 0.5 * (G + G.T)
    logger.info("gram_assembled kind=Spectral s=%.4g n=%d lambda_1=%.6g", s, mesh.n_elems, lam[0])
    return GramOperator(SpaceKind.SPECTRAL, s, mesh, G, None)


def assemble(kind: SpaceKind | str, mesh: Mesh1D, s: float) -> GramOperator:
    kind = SpaceKind(kind)
    if kind not in offered_kinds(s):
        raise ConfigError(f"{kind.value} is not offered for s={s}", field="space.kind")
    if kind is SpaceKind.INTEGRAL_TILDE:
        return assemble_integral_tilde(mesh, s)
    if kind is SpaceKind.INTEGRAL_OMEGA:
        return assemble_integral_omega(mesh, s)
    return assemble_spectral(mesh, s)


def gram_inner(G: GramOperator, u: FeFunction, w: FeFunction) -> float:
    ensure_same_mesh(G.mesh, u.mesh, w.mesh)
    return float(u.values @ G.matrix @ w.values)


def positive_part_check(G: GramOperator, w: FeFunction) -> Dict[str, float]:
    """Values of ‖w₊‖², (w, w₊) and ‖w‖² in the Gram inner product, w₊ the nodal positive part."""
    wp = FeFunction(w.mesh, np.maximum(w.values, 0.0))
    return {
        "pos_pos": gram_inner(G, wp, wp),
        "w_pos": gram_inner(G, w, wp),
        "w_w": gram_inner(G, w, w),
    }


def norm_equivalence_ratios(
    meshes: Iterable[Mesh1D],
    s: float,
    samples: int,
    rng: np.random.Generator,
    *,
    numerator: SpaceKind = SpaceKind.SPECTRAL,
    denominator: SpaceKind = SpaceKind.INTEGRAL_TILDE,
) -> List[Tuple[int, float, float]]:
    """(n, min ratio, max ratio) of wᵀG_num w / wᵀG_den w over random w per mesh."""
    rows = []
    for mesh in meshes:
        g_num = assemble(numerator, mesh, s).matrix
        g_den = assemble(denominator, mesh, s).matrix
        W = rng.standard_normal((samples, mesh.interior_dof_count))
        ratios = np.einsum("ki,ij,kj->k", W, g_num, W) / np.einsum("ki,ij,kj->k", W, g_den, W)
        rows.append((mesh.n_elems, float(ratios.min()), float(ratios.max())))
    return rows


def write_dense_matrix(path: str | Path, matrix: np.ndarray) -> Path:
    """Whitespace separated, row-major, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(matrix), fmt="%.17g", delimiter=" ")
    return path


def read_dense_matrix(path: str | Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path))
