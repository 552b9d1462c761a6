from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from src.errors import ConfigError, MeshMismatchError

# Gauss-Legendre order for the p > 0 pseudo-norm on elements where w keeps its sign.
LP_GAUSS_ORDER = 8
# Relative cut (times max |values|) below which nodal values count as zero.
DEFAULT_ZERO_REL = 1e-8


@dataclass(frozen=True)
class Mesh1D:
    """Uniform partition of (a, b) with P1 hats on the interior nodes."""

    a: float
    b: float
    n_elems: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.b <= self.a:
            raise ConfigError(f"mesh needs a < b, got a={self.a} b={self.b}", field="mesh")
        if int(self.n_elems) != self.n_elems or self.n_elems < 2:
            raise ConfigError(f"mesh needs n_elems >= 2, got {self.n_elems}", field="mesh.n")
        nodes = np.linspace(self.a, self.b, int(self.n_elems) + 1)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n_elems

    @property
    def interior_dof_count(self) -> int:
        return self.n_elems - 1

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]

    @property
    def length(self) -> float:
        return self.b - self.a


@dataclass(frozen=True)
class FeFunction:
    """Interior nodal values of a P1 function; zero on the boundary and outside (a, b)."""

    mesh: Mesh1D
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.mesh.interior_dof_count,):
            raise ConfigError(
                f"expected {self.mesh.interior_dof_count} interior values, got shape {values.shape}",
                field="values",
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def full_values(self) -> np.ndarray:
        """Nodal values including the two zero boundary nodes."""
        return np.concatenate(([0.0], self.values, [0.0]))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.mesh.nodes, self.full_values(), left=0.0, right=0.0)


def ensure_same_mesh(*meshes: Mesh1D) -> Mesh1D:
    first = meshes[0]
    for m in meshes[1:]:
        if m != first:
            raise MeshMismatchError(f"mesh mismatch: {first} vs {m}")
    return first


def interpolate(mesh: Mesh1D, func: Callable[[np.ndarray], np.ndarray]) -> FeFunction:
    values = np.broadcast_to(np.asarray(func(mesh.interior_nodes), dtype=float), (mesh.interior_dof_count,))
    return FeFunction(mesh, values)


def zeros(mesh: Mesh1D) -> FeFunction:
    return FeFunction(mesh, np.zeros(mesh.interior_dof_count))


def ones(mesh: Mesh1D) -> FeFunction:
    return FeFunction(mesh, np.ones(mesh.interior_dof_count))


def mass_matrix(mesh: Mesh1D) -> np.ndarray:
    """Exact P1 mass matrix on the interior nodes (tridiagonal, dense storage)."""
    n = mesh.interior_dof_count
    h = mesh.h
    M = np.zeros((n, n))
    idx = np.arange(n)
    M[idx, idx] = 2.0 * h / 3.0
    M[idx[:-1], idx[1:]] = h / 6.0
    M[idx[1:], idx[:-1]] = h / 6.0
    return M


def stiffness_matrix(mesh: Mesh1D) -> np.ndarray:
    """P1 Dirichlet stiffness matrix of -u'' on the interior nodes."""
    n = mesh.interior_dof_count
    h = mesh.h
    K = np.zeros((n, n))
    idx = np.arange(n)
    K[idx, idx] = 2.0 / h
    K[idx[:-1], idx[1:]] = -1.0 / h
    K[idx[1:], idx[:-1]] = -1.0 / h
    return K


def lumped_masses(M: np.ndarray) -> np.ndarray:
    return np.asarray(M).sum(axis=1)


def _check_p(p: float) -> None:
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"p must lie in [0, 1), got {p}", field="p")


def _support_length(left: np.ndarray, right: np.ndarray, h: float, threshold: float) -> float:
    # Measure of {|w| > threshold} for w linear on each element, endpoint values left/right.
    total = 0.0
    for sign in (1.0, -1.0):
        lo = sign * left - threshold
        hi = sign * right - threshold
        both = (lo > 0) & (hi > 0)
        total += h * np.count_nonzero(both)
        cross = (lo > 0) != (hi > 0)
        if np.any(cross):
            lo_c, hi_c = lo[cross], hi[cross]
            pos = np.where(lo_c > 0, lo_c, hi_c)
            total += h * float(np.sum(pos / np.abs(hi_c - lo_c)))
    return total


def _vanishing_elements(left: np.ndarray, right: np.ndarray, h: float, p: float) -> float:
    # ∫ |u|^p over elements where u is linear and hits zero: h (|a|^{p+1} + |b|^{p+1}) / ((p+1)(|a|+|b|)).
    la, lb = np.abs(left), np.abs(right)
    total = la + lb
    safe = np.where(total > 0, total, 1.0)
    return float(h * np.sum(np.where(total > 0, (la ** (p + 1) + lb ** (p + 1)) / ((p + 1) * safe), 0.0)))


def lp_integral(w: FeFunction, p: float, zero_threshold: float = 0.0, *, order: int = LP_GAUSS_ORDER) -> float:
    """∫_Ω |w|^p dx for p in (0, 1); the measure of {|w| > zero_threshold} for p = 0.

    The p = 0 case is exact from the linear pieces. For p > 0 elements on which w
    keeps one strict sign use per-element Gauss-Legendre quadrature; elements where
    w touches or crosses zero are integrated in closed form.
    """
    _check_p(p)
    if zero_threshold < 0:
        raise ConfigError(f"zero_threshold must be >= 0, got {zero_threshold}", field="zero_threshold")
    full = w.full_values()
    left, right = full[:-1], full[1:]
    h = w.mesh.h
    if p == 0.0:
        return _support_length(left, right, h, zero_threshold)
    signed = left * right > 0
    xi, wq = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (xi + 1.0)
    vals = np.outer(left[signed], 1.0 - t) + np.outer(right[signed], t)
    smooth = 0.5 * h * float(np.sum(np.abs(vals) ** p @ wq))
    return smooth + _vanishing_elements(left[~signed], right[~signed], h, p)


def lp_integral_lumped(w: FeFunction, p: float, m: np.ndarray, zero_threshold: float = 0.0) -> float:
    """Lumped nodal quadrature Σ m_i |w_i|^p.

    p = 0 counts the nodes with |w_i| > zero_threshold. For p > 0 the nodes with
    |w_i| < zero_threshold are treated as zeros, so passing the smoothing radius ε
    gives the value that the ε-multiplier pairs with exactly.
    """
    _check_p(p)
    if zero_threshold < 0:
        raise ConfigError(f"zero_threshold must be >= 0, got {zero_threshold}", field="zero_threshold")
    v = np.abs(w.values)
    if p == 0.0:
        return float(np.sum(m[v > zero_threshold]))
    kept = v >= zero_threshold
    return float(np.sum(m[kept] * v[kept] ** p))


def l2_inner(u: FeFunction, w: FeFunction, M: np.ndarray | None = None) -> float:
    mesh = ensure_same_mesh(u.mesh, w.mesh)
    if M is None:
        M = mass_matrix(mesh)
    return float(u.values @ M @ w.values)


def support(w: FeFunction, zero_threshold: float) -> np.ndarray:
    """Boolean mask of interior nodes with |w_i| > zero_threshold."""
    return np.abs(w.values) > zero_threshold


def relative_threshold(values: np.ndarray, rel: float = DEFAULT_ZERO_REL) -> float:
    scale = float(np.max(np.abs(values))) if np.size(values) else 0.0
    return rel * scale
