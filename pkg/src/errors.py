from __future__ import annotations

from typing import Any, Dict


class FracapError(Exception):
    """Base class for errors we want to handle at the command-line edge."""


class ConfigError(FracapError, ValueError):
    """Invalid configuration, expression or parameter range."""

    def __init__(self, message: str, *, field: str | None = None):
        super().__init__(message)
        self.field = field


class MeshMismatchError(FracapError, ValueError):
    """Two operands live on different meshes."""


class NumericalError(FracapError):
    """A numerical stage failed (factorization, eigensolve, quadrature budget)."""

    def __init__(self, stage: str, message: str, context: Dict[str, Any] | None = None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.context = dict(context or {})
