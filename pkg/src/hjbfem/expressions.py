"""Safe arithmetic expressions for coefficient fields in config files.

Grammar: +, -, *, /, unary minus, parentheses, numeric literals, the
variables x (and y in 2D), the constants pi and e, and the functions
abs, min, max, sin, cos, exp.  Vector-valued fields are comma-separated
component expressions.  Parsing uses the Python ast module with a strict
whitelist; nothing else evaluates.
"""
from __future__ import annotations

import ast
import math

import numpy as np

from .errors import ConfigurationError

_FUNCTIONS = {
    "abs": abs,
    "min": min,
    "max": max,
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
}
_CONSTANTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
}


def _check(node, variables):
    if isinstance(node, ast.Expression):
        _check(node.body, variables)
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ConfigurationError(
                f"operator {type(node.op).__name__} not allowed"
            )
        _check(node.left, variables)
        _check(node.right, variables)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ConfigurationError("only unary +/- are allowed")
        _check(node.operand, variables)
    elif isinstance(node, ast.Call):
        if (not isinstance(node.func, ast.Name)
                or node.func.id not in _FUNCTIONS or node.keywords):
            raise ConfigurationError("only abs/min/max/sin/cos/exp calls allowed")
        if not node.args:
            raise ConfigurationError(f"{node.func.id}() needs arguments")
        for arg in node.args:
            _check(arg, variables)
    elif isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _CONSTANTS:
            raise ConfigurationError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ConfigurationError(f"literal {node.value!r} not allowed")
    else:
        raise ConfigurationError(
            f"syntax element {type(node).__name__} not allowed"
        )


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        val = _eval(node.operand, env)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.Call):
        return _FUNCTIONS[node.func.id](*(_eval(a, env) for a in node.args))
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTANTS[node.id]
    if isinstance(node, ast.Constant):
        return float(node.value)
    raise AssertionError("unreachable: node was validated")


def compile_scalar(text: str, dimension: int):
    """Compile an expression over x[, y] into a callable of the point."""
    variables = ("x",) if dimension == 1 else ("x", "y")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {text!r}: {exc}") from None
    _check(tree, variables)

    def field(point, _tree=tree, _vars=variables):
        point = np.asarray(point, dtype=float).reshape(len(_vars))
        env = dict(zip(_vars, (float(v) for v in point)))
        return float(_eval(_tree, env))

    return field


def compile_vector(text: str, dimension: int):
    """Compile comma-separated component expressions into a vector field."""
    try:
        tree = ast.parse(f"({text})", mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {text!r}: {exc}") from None
    if isinstance(tree.body, ast.Tuple):
        parts = tree.body.elts
    else:
        parts = [tree.body]
    if len(parts) != dimension:
        raise ConfigurationError(
            f"vector expression {text!r} has {len(parts)} components, "
            f"expected {dimension}"
        )
    components = [compile_scalar(ast.unparse(p), dimension) for p in parts]

    def field(point):
        return np.array([c(point) for c in components])

    return field
