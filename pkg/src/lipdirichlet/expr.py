"""A tiny, safe arithmetic expression language.

Expressions are parsed with :mod:`ast` and only a whitelist of node types is
accepted: numbers, named variables, + - * / ** (binary and unary), calls
to sin, cos, exp, log, sqrt, tanh, abs, pow, and the constants pi and e. Anything else is rejected
before evaluation, so no Python code is ever executed.
"""
import ast

import numpy as np

from .errors import ConfigError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "abs": np.abs,
    "pow": np.power,
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}
_UNOPS = {ast.USub: np.negative, ast.UAdd: np.positive}


class Expression:
    """Compiled expression; call it with keyword arrays for the variables."""

    def __init__(self, source, variables=("x", "y", "z")):
        self.source = source
        self.variables = tuple(variables)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {source!r}: {exc.msg}",
                              exc.lineno, exc.offset) from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                self._reject(node, "only numeric literals are allowed")
        elif isinstance(node, ast.Name):
            if node.id not in CONSTANTS and node.id not in self.variables:
                self._reject(node, f"unknown name {node.id!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                self._reject(node, "operator not allowed")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNOPS:
                self._reject(node, "operator not allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                self._reject(node, "only " + ", ".join(FUNCTIONS) + " may be called")
            if node.keywords:
                self._reject(node, "keyword arguments are not allowed")
            nargs = 2 if node.func.id == "pow" else 1
            if len(node.args) != nargs:
                self._reject(node, f"{node.func.id} takes {nargs} argument(s)")
            for a in node.args:
                self._check(a)
        else:
            self._reject(node, f"syntax element {type(node).__name__} not allowed")

    def _reject(self, node, why):
        raise ConfigError(f"in expression {self.source!r}: {why}",
                          getattr(node, "lineno", 1), getattr(node, "col_offset", 0) + 1)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return CONSTANTS[node.id] if node.id in CONSTANTS else env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](self._eval(node.operand, env))
        args = [self._eval(a, env) for a in node.args]
        return FUNCTIONS[node.func.id](*args)

    def __call__(self, **values):
        missing = [v for v in self.variables if v not in values and self._uses(v)]
        if missing:
            raise ConfigError(f"missing variable(s) {missing} for {self.source!r}")
        env = {k: np.asarray(v, dtype=float) for k, v in values.items()}
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, env)
        shape = np.broadcast(*env.values()).shape if env else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def _uses(self, name):
        return any(isinstance(n, ast.Name) and n.id == name for n in ast.walk(self._tree))


def compile_expression(source, variables=("x", "y", "z")):
    return Expression(source, variables)
