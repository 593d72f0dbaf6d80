"""
Arithmetic expressions for field data in configuration files.

Grammar (version 1)::

    expr    := number | name | call | expr op expr | '-' expr | '+' expr | '(' expr ')'
    op      := '+' | '-' | '*' | '/' | '**'
    name    := 'x1' ... 'xn' | 't' | 'pi' | 'e'
    call    := fn '(' expr ')'
    fn      := 'cos' | 'sin' | 'exp' | 'tanh' | 'sqrt' | 'log' | 'cosh' | 'sinh' | 'abs'

``^`` is accepted as a synonym for ``**``. Expressions are parsed with the
Python ``ast`` module and evaluated by walking the tree, so nothing outside
this grammar can run.
"""

from __future__ import annotations

import ast
import math

import numpy as np

from .grid import ScalarField, SpaceTimeGrid

__all__ = ["Expression", "ExpressionError", "GRAMMAR_VERSION", "field_from_expr"]

GRAMMAR_VERSION = 1

_FUNCS = {
    "cos": np.cos, "sin": np.sin, "exp": np.exp, "tanh": np.tanh, "sqrt": np.sqrt,
    "log": np.log, "cosh": np.cosh, "sinh": np.sinh, "abs": np.abs,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}


class ExpressionError(ValueError):
    pass


class Expression:
    """A parsed expression over ``x1..x{dim}`` and optionally ``t``."""

    def __init__(self, text: str, dim: int, *, allow_t: bool = False):
        self.text = str(text)
        self.dim = dim
        self.allow_t = allow_t
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg} at column {exc.offset}") from None
        self._check(tree.body)
        self._tree = tree.body

    @property
    def uses_t(self) -> bool:
        return any(isinstance(n, ast.Name) and n.id == "t" for n in ast.walk(self._tree))

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"{self.text!r}: only numeric literals are allowed")
        elif isinstance(node, ast.Name):
            self._name(node.id)
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"{self.text!r}: operator {type(node.op).__name__} is not allowed")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"{self.text!r}: unary {type(node.op).__name__} is not allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError(f"{self.text!r}: unknown function; allowed: {', '.join(sorted(_FUNCS))}")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"{self.text!r}: {node.func.id} takes exactly one argument")
            self._check(node.args[0])
        else:
            raise ExpressionError(f"{self.text!r}: {type(node).__name__} is not part of the grammar")

    def _name(self, name: str):
        if name in _CONSTS:
            return
        if name == "t":
            if not self.allow_t:
                raise ExpressionError(f"{self.text!r}: 't' is not allowed in a spatial expression")
            return
        if name.startswith("x") and name[1:].isdigit() and 1 <= int(name[1:]) <= self.dim:
            return
        raise ExpressionError(f"{self.text!r}: unknown name {name!r}; use x1..x{self.dim}, t, pi, e")

    def __call__(self, t, *x):
        env = {f"x{i + 1}": xi for i, xi in enumerate(x)}
        env["t"] = t
        return self._eval(self._tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return _CONSTS[node.id] if node.id in _CONSTS else env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            return -val if isinstance(node.op, ast.USub) else val
        return _FUNCS[node.func.id](self._eval(node.args[0], env))

    def __repr__(self):
        return f"Expression({self.text!r})"


def field_from_expr(grid: SpaceTimeGrid, text, *, spacetime: bool = False) -> ScalarField:
    """Sample an expression (or a plain number) on the grid."""
    expr = Expression(str(text), grid.dim, allow_t=spacetime)
    with np.errstate(all="raise"):
        try:
            if spacetime:
                t, x = grid.spacetime_coords()
                vals = expr(t, *x)
            else:
                vals = expr(None, *grid.coords())
        except FloatingPointError as exc:
            raise ExpressionError(f"{expr.text!r}: {exc} on the grid") from None
    shape = grid.spacetime_shape if spacetime else grid.shape
    return ScalarField(grid, np.broadcast_to(np.asarray(vals, dtype=float), shape))
