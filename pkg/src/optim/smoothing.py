"""Smoothing families for the L^p pseudo-norm.

Both families act on t = w², so no absolute values appear:

    PowerP   (0 < p < 1):  ψ_ε(t) = (p/2) t / ε^{2-p} + (1 - p/2) ε^p   for t < ε²
                           ψ_ε(t) = t^{p/2}                              for t ≥ ε²
    ZeroNorm (p = 0):      ψ⁰_ε(t) = t / (t + ε)
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from src.errors import ConfigError
from src.fem.core_fe import FeFunction, LP_GAUSS_ORDER, lumped_masses


class SmoothingVariant(str, Enum):
    POWER_P = "PowerP"
    ZERO_NORM = "ZeroNorm"


@dataclass(frozen=True)
class SmoothingFamily:
    p: float
    variant: SmoothingVariant

    def __post_init__(self) -> None:
        if self.variant is SmoothingVariant.ZERO_NORM and self.p != 0.0:
            raise ConfigError(f"ZeroNorm smoothing requires p = 0, got {self.p}", field="p")
        if self.variant is SmoothingVariant.POWER_P and not (0.0 < self.p < 1.0):
            raise ConfigError(f"PowerP smoothing requires p in (0, 1), got {self.p}", field="p")

    @staticmethod
    def for_p(p: float) -> "SmoothingFamily":
        if not (0.0 <= p < 1.0):
            raise ConfigError(f"p must lie in [0, 1), got {p}", field="p")
        return SmoothingFamily(p, SmoothingVariant.ZERO_NORM if p == 0.0 else SmoothingVariant.POWER_P)


def _check(t, eps: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ConfigError("psi is defined for t >= 0 only", field="t")
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}", field="eps")
    return t


def psi(family: SmoothingFamily, t, eps: float):
    t = _check(t, eps)
    if family.variant is SmoothingVariant.ZERO_NORM:
        out = t / (t + eps)
    else:
        p = family.p
        below = 0.5 * p * t / eps ** (2.0 - p) + (1.0 - 0.5 * p) * eps**p
        out = np.where(t < eps * eps, below, np.maximum(t, eps * eps) ** (0.5 * p))
    return float(out) if out.ndim == 0 else out


def psi_prime(family: SmoothingFamily, t, eps: float):
    t = _check(t, eps)
    if family.variant is SmoothingVariant.ZERO_NORM:
        out = eps / (t + eps) ** 2
    else:
        # (p/2) min(ε^{p-2}, t^{(p-2)/2}), the exponent is negative.
        p = family.p
        out = 0.5 * p * np.maximum(t, eps * eps) ** (0.5 * (p - 2.0))
    return float(out) if out.ndim == 0 else out


def g_eps(family: SmoothingFamily, w: FeFunction, eps: float, M_lumped: np.ndarray) -> float:
    """Lumped nodal quadrature Σ m_i ψ(w_i², ε)."""
    m = np.asarray(M_lumped, dtype=float)
    if m.ndim == 2:
        m = lumped_masses(m)
    return float(np.sum(m * psi(family, w.values**2, eps)))


def g_eps_gauss(family: SmoothingFamily, w: FeFunction, eps: float, order: int = LP_GAUSS_ORDER) -> float:
    """∫_Ω ψ(w(x)², ε) dx with per-element Gauss-Legendre quadrature; used for reporting."""
    full = w.full_values()
    xi, wq = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (xi + 1.0)
    vals = np.outer(full[:-1], 1.0 - t) + np.outer(full[1:], t)
    return float(0.5 * w.mesh.h * np.sum(psi(family, vals**2, eps) @ wq))


def smoothed_objective(
    family: SmoothingFamily,
    w: FeFunction,
    eps: float,
    *,
    alpha: float,
    beta: float,
    G: np.ndarray,
    M: np.ndarray,
    target: np.ndarray,
) -> float:
    """Φ_ε(w) = ½‖w - w_d‖²_M + (α/2) wᵀGw + β G_ε(w), lumped G_ε."""
    diff = w.values - target
    return float(
        0.5 * diff @ M @ diff + 0.5 * alpha * w.values @ G @ w.values + beta * g_eps(family, w, eps, lumped_masses(M))
    )
