import numpy as np
import pytest

from anomalykit.expressions import ExpressionError, compile_expression


def test_polynomial_and_caret_power():
    f = compile_expression("x1^2 - 2*x2 + 1")
    assert f(3.0, 0.5) == pytest.approx(9.0 - 1.0 + 1.0)


def test_vectorized_over_arrays():
    f = compile_expression("sin(x1)*cos(x2) + 0.5")
    x = np.linspace(0, 1, 7)
    y = np.linspace(0, 2, 7)
    out = f(x, y)
    assert out.shape == (7,)
    assert out == pytest.approx(np.sin(x) * np.cos(y) + 0.5)


def test_constant_expression_broadcasts():
    f = compile_expression("2.5")
    assert float(f(np.zeros((3, 3)), np.zeros((3, 3)))) == 2.5 or \
        f(np.zeros((3, 3)), np.zeros((3, 3))).shape in ((), (3, 3))


def test_exp_and_division():
    f = compile_expression("exp(-x1)/(1 + x2)")
    assert f(1.0, 1.0) == pytest.approx(np.exp(-1.0) / 2.0)


@pytest.mark.parametrize("bad", [
    "__import__('os')",
    "x3 + 1",
    "lambda x: x",
    "x1.real",
    "abs(x1)",
    "[1,2]",
    "x1 if x2 else 0",
])
def test_rejects_anything_outside_grammar(bad):
    with pytest.raises(ExpressionError):
        compile_expression(bad)


def test_rejects_malformed_syntax():
    with pytest.raises(ExpressionError):
        compile_expression("x1 + * 2")
