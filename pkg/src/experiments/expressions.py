"""Target expressions such as ``20*(x-0.5)**2`` or ``1.5*sin(3*pi*x)``."""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr

from src.errors import ConfigError
from src.fem.core_fe import FeFunction, Mesh1D, interpolate

x = sp.Symbol("x", real=True)

_NAMES = {
    "x": x,
    "pi": sp.pi,
    "sin": sp.sin,
    "cos": sp.cos,
    "abs": sp.Abs,
    "pow": sp.Pow,
}
_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


def _check_syntax(text: str) -> None:
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as e:
        raise ConfigError(f"invalid expression {text!r}: {e.msg}", field="problem.w_d_expression") from e
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigError(
                f"unsupported syntax {type(node).__name__} in {text!r}", field="problem.w_d_expression"
            )
        if isinstance(node, ast.Name) and node.id not in _NAMES:
            raise ConfigError(f"unknown name {node.id!r} in {text!r}", field="problem.w_d_expression")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.keywords == []):
            raise ConfigError(f"unsupported call in {text!r}", field="problem.w_d_expression")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"only numeric literals are allowed in {text!r}", field="problem.w_d_expression")


def compile_expression(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized callable of x for a whitelisted arithmetic expression."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("expression must be a non-empty string", field="problem.w_d_expression")
    _check_syntax(text)
    try:
        expr = parse_expr(text, local_dict=dict(_NAMES), evaluate=True)
    except (TypeError, ValueError, sp.SympifyError) as e:
        raise ConfigError(f"invalid expression {text!r}: {e}", field="problem.w_d_expression") from e
    if not expr.free_symbols <= {x}:
        raise ConfigError(f"expression {text!r} may only depend on x", field="problem.w_d_expression")
    fn = sp.lambdify(x, expr, modules="numpy")

    def evaluate(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        values = np.broadcast_to(np.asarray(fn(points), dtype=float), points.shape)
        if not np.all(np.isfinite(values)):
            raise ConfigError(f"expression {text!r} is not finite on the mesh", field="problem.w_d_expression")
        return values

    return evaluate


def interpolate_expression(mesh: Mesh1D, text: str) -> FeFunction:
    return interpolate(mesh, compile_expression(text))
