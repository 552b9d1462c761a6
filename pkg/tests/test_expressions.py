import numpy as np
import pytest

from src.errors import ConfigError
from src.experiments.expressions import compile_expression, interpolate_expression
from src.fem.core_fe import Mesh1D


def test_target_expressions_evaluate_on_arrays():
    x = np.array([0.0, 0.5, 1.0])
    assert np.allclose(compile_expression("20*(x-0.5)**2")(x), [5.0, 0.0, 5.0])
    assert np.allclose(compile_expression("10*x*(x-1)")(x), [0.0, -2.5, 0.0])
    assert np.allclose(compile_expression("1.5*sin(3*pi*x)")(np.array([1.0 / 6.0])), [1.5])


@pytest.mark.parametrize(
    "text,expected",
    [("1", 1.0), ("-2.5", -2.5), ("abs(x-0.75)", 0.25), ("pow(x, 3)", 0.125), ("cos(2*pi*x)", -1.0)],
)
def test_constants_and_whitelisted_functions(text, expected):
    values = compile_expression(text)(np.array([0.5, 0.5]))
    assert values.shape == (2,)
    assert np.allclose(values, expected)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "   ",
        "__import__('os')",
        "x.real",
        "y + 1",
        "exp(x)",
        "'abc'",
        "lambda: 1",
        "x if x else 1",
        "[x]",
        "sin(x=1)",
        "1 +",
    ],
)
def test_rejected_expressions(text):
    with pytest.raises(ConfigError) as exc:
        compile_expression(text)
    assert exc.value.field == "problem.w_d_expression"


def test_non_finite_values_are_rejected_at_evaluation():
    f = compile_expression("1/(x-0.5)")
    with np.errstate(divide="ignore"):
        with pytest.raises(ConfigError):
            f(np.array([0.25, 0.5]))


def test_interpolate_expression_on_interior_nodes():
    mesh = Mesh1D(0.0, 1.0, 4)
    w = interpolate_expression(mesh, "x")
    assert np.allclose(w.values, [0.25, 0.5, 0.75])
