"""Tiny arithmetic expression grammar for config-defined coefficient fields.

Grammar: literals, x1, x2, + - * / ^, parentheses, and the functions
sin, cos, exp. '^' is exponentiation. Everything else is rejected, so a
config file cannot smuggle arbitrary code into an experiment.
"""
from __future__ import annotations

import ast
from typing import Callable

import numpy as np

_ALLOWED_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_ALLOWED_NAMES = {"x1", "x2"}

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_ALLOWED_UNARY = (ast.UAdd, ast.USub)


class ExpressionError(ValueError):
    """Raised when an expression uses anything outside the grammar."""


def _validate(node: ast.AST, source: str) -> None:
    if isinstance(node, ast.Expression):
        _validate(node.body, source)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _ALLOWED_BINOPS):
            raise ExpressionError(f"operator not allowed in {source!r}")
        _validate(node.left, source)
        _validate(node.right, source)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _ALLOWED_UNARY):
            raise ExpressionError(f"unary operator not allowed in {source!r}")
        _validate(node.operand, source)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_FUNCS:
            raise ExpressionError(f"unknown function in {source!r}")
        if node.keywords or len(node.args) != 1:
            raise ExpressionError(f"functions take one positional argument: {source!r}")
        _validate(node.args[0], source)
    elif isinstance(node, ast.Name):
        if node.id not in _ALLOWED_NAMES:
            raise ExpressionError(f"unknown symbol {node.id!r} in {source!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric literal in {source!r}")
    else:
        raise ExpressionError(f"syntax not allowed in {source!r}")


def compile_expression(source: str) -> Callable[..., np.ndarray]:
    """Compile a coefficient expression into a vectorized f(x1, x2).

    The returned callable broadcasts over numpy arrays and always
    returns an array shaped like x1 (scalars give 0-d arrays).
    """
    text = source.replace("^", "**")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from exc
    _validate(tree, source)
    code = compile(tree, "<coefficient>", "eval")
    env = dict(_ALLOWED_FUNCS)

    def evaluate(x1, x2):
        local = {"x1": np.asarray(x1, dtype=float), "x2": np.asarray(x2, dtype=float)}
        out = eval(code, {"__builtins__": {}}, {**env, **local})
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(local["x1"])).copy()

    evaluate.source = source  # type: ignore[attr-defined]
    return evaluate
