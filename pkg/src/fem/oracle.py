"""Quadrature oracle for the integral W-norms, independent of the assembly code.

The double integral is rewritten with r = y - x as

    ∬_{Ω×Ω} (w(x)-w(y))² |x-y|^{-1-2s} dy dx = 2 ∫_0^{b-a} r^{-1-2s} S(r) dr,
    S(r) = ∫_a^{b-r} (w(x+r) - w(x))² dx,

where S(r) is evaluated exactly (Simpson on the pieces where the integrand is
quadratic) and the outer integral is refined level by level until two
successive levels agree.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import gamma, roots_jacobi

from src.errors import ConfigError, NumericalError
from src.fem.core_fe import FeFunction
from src.fem.frac_gram import SpaceKind

logger = logging.getLogger("fracap.fem")

ORACLE_ORDER = 6


def _kernel_constant(s: float) -> float:
    return s * 4.0**s * gamma(s + 0.5) / (np.sqrt(np.pi) * gamma(1.0 - s))


def _difference_energy(nodes: np.ndarray, vals: np.ndarray, r: np.ndarray) -> np.ndarray:
    """S(r) for every entry of r, exact for piecewise-linear w."""
    a, b = nodes[0], nodes[-1]
    upper = (b - r)[:, None]
    pts = np.concatenate([nodes[None, :].repeat(r.size, 0), nodes[None, :] - r[:, None]], axis=1)
    pts = np.clip(pts, a, upper)
    pts = np.sort(np.concatenate([pts, np.full((r.size, 1), a), upper], axis=1), axis=1)
    lo, hi = pts[:, :-1], pts[:, 1:]
    mid = 0.5 * (lo + hi)

    def g(x: np.ndarray) -> np.ndarray:
        shifted = np.interp((x + r[:, None]).ravel(), nodes, vals).reshape(x.shape)
        base = np.interp(x.ravel(), nodes, vals).reshape(x.shape)
        return (shifted - base) ** 2

    return np.sum((hi - lo) / 6.0 * (g(lo) + 4.0 * g(mid) + g(hi)), axis=1)


def _outer_integral(nodes: np.ndarray, vals: np.ndarray, s: float, pieces: int) -> float:
    length = nodes[-1] - nodes[0]
    delta = length / pieces
    # First piece: S(r) = r² · (smooth), weight r^{1-2s}.
    t, wt = roots_jacobi(ORACLE_ORDER, 0.0, 1.0 - 2.0 * s)
    r0 = 0.5 * delta * (t + 1.0)
    first = (0.5 * delta) ** (2.0 - 2.0 * s) * np.sum(wt * _difference_energy(nodes, vals, r0) / r0**2)

    q, wq = np.polynomial.legendre.leggauss(ORACLE_ORDER)
    starts = delta * np.arange(1, pieces)
    r = (starts[:, None] + 0.5 * delta * (q[None, :] + 1.0)).ravel()
    f = r ** (-1.0 - 2.0 * s) * _difference_energy(nodes, vals, r)
    rest = 0.5 * delta * np.sum(f.reshape(pieces - 1, ORACLE_ORDER) @ wq) if pieces > 1 else 0.0
    return float(first + rest)


def _exterior_integral(nodes: np.ndarray, vals: np.ndarray, s: float, pieces: int) -> float:
    """∫_Ω w² ((x-a)^{-2s} + (b-x)^{-2s}) dx; w vanishes linearly at both ends."""
    a, b = nodes[0], nodes[-1]
    delta = (b - a) / pieces
    t, wt = roots_jacobi(ORACLE_ORDER, 0.0, 2.0 - 2.0 * s)
    q, wq = np.polynomial.legendre.leggauss(ORACLE_ORDER)

    def one_side(dist_from_end) -> float:
        # Singular end piece: w² = dist² · (smooth), weight dist^{2-2s}.
        d0 = 0.5 * delta * (t + 1.0)
        x0 = dist_from_end(d0)
        end = (0.5 * delta) ** (3.0 - 2.0 * s) * np.sum(wt * np.interp(x0, nodes, vals) ** 2 / d0**2)
        starts = delta * np.arange(1, pieces)
        d = (starts[:, None] + 0.5 * delta * (q[None, :] + 1.0)).ravel()
        f = np.interp(dist_from_end(d), nodes, vals) ** 2 * d ** (-2.0 * s)
        rest = 0.5 * delta * np.sum(f.reshape(pieces - 1, ORACLE_ORDER) @ wq) if pieces > 1 else 0.0
        return float(end + rest)

    return one_side(lambda d: a + d) + one_side(lambda d: b - d)


def _mass(nodes: np.ndarray, vals: np.ndarray) -> float:
    h = np.diff(nodes)
    lft, rgt = vals[:-1], vals[1:]
    return float(np.sum(h / 3.0 * (lft * lft + lft * rgt + rgt * rgt)))


def seminorm_oracle(
    w: FeFunction,
    kind: SpaceKind | str,
    s: float,
    tol: float = 1e-8,
    *,
    max_levels: int = 10,
) -> float:
    """‖w‖²_W for the integral kinds by level-refined quadrature of the piecewise-linear w.

    Returns when two successive refinement levels agree within tol/2 relative.
    """
    try:
        kind = SpaceKind(kind)
    except ValueError as e:
        raise ConfigError(f"unknown space kind {kind!r}", field="kind") from e
    if not kind.is_integral:
        raise ConfigError(f"oracle supports integral kinds only, got {kind.value}", field="kind")
    if not (0.0 < s < 1.0) or s == 0.5:
        raise ConfigError(f"s must lie in (0, 1) without 1/2, got {s}", field="s")
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol}", field="tol")

    nodes = np.asarray(w.mesh.nodes, dtype=float)
    vals = w.full_values()
    if not np.any(vals):
        return 0.0

    c = _kernel_constant(s)
    exterior = kind is SpaceKind.INTEGRAL_TILDE

    def level_value(level: int) -> float:
        pieces = w.mesh.n_elems * 2**level
        total = _mass(nodes, vals) + c * _outer_integral(nodes, vals, s, pieces)
        if exterior:
            total += c / (2.0 * s) * _exterior_integral(nodes, vals, s, pieces)
        return total

    previous = level_value(0)
    for level in range(1, max_levels + 1):
        current = level_value(level)
        if abs(current - previous) <= 0.5 * tol * abs(current):
            logger.debug("oracle_converged level=%d value=%.17g", level, current)
            return current
        previous = current
    raise NumericalError(
        "oracle", "refinement budget exceeded", {"max_levels": max_levels, "last_value": previous}
    )
