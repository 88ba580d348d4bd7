"""A closed grammar for analytic field expressions in config files.

Allowed: numbers, ``pi``, variables ``t`` and ``x1``..``x3`` (``x`` is an
alias of ``x1``), ``+ - * /``, integer powers ``**`` and the functions
``sin``, ``cos``, ``exp``. Anything else is rejected at parse time, so
expressions are never handed to ``eval``.
"""
import ast

import numpy as np

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
CONSTANTS = {"pi": np.pi}
VARIABLES = ("t", "x", "x1", "x2", "x3")


class ExpressionError(ValueError):
    pass


def _check(node, src):
    if isinstance(node, ast.Expression):
        return _check(node.body, src)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return
    if isinstance(node, ast.Name):
        if node.id in CONSTANTS or node.id in VARIABLES:
            return
        raise ExpressionError(f"unknown name {node.id!r} in {src!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        return _check(node.operand, src)
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            exp = node.right
            if isinstance(exp, ast.UnaryOp) and isinstance(exp.op, ast.USub):
                exp = exp.operand
            if not (isinstance(exp, ast.Constant) and isinstance(exp.value, int)):
                raise ExpressionError(f"only integer powers are allowed in {src!r}")
            return _check(node.left, src)
        if isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div)):
            _check(node.left, src)
            return _check(node.right, src)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in FUNCTIONS and len(node.args) == 1 and not node.keywords:
        return _check(node.args[0], src)
    raise ExpressionError(f"unsupported construct {type(node).__name__} in {src!r}")


class Expression:
    """A parsed expression ``f(t, x)``; ``x`` has shape ``(dim, ...)``."""

    def __init__(self, src):
        self.src = str(src).strip()
        try:
            tree = ast.parse(self.src, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.src!r}: {exc.msg}") from None
        _check(tree, self.src)
        self._tree = tree

    def __repr__(self):
        return f"Expression({self.src!r})"

    def _eval(self, node, env):
        if isinstance(node, ast.Expression):
            return self._eval(node.body, env)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in CONSTANTS:
                return CONSTANTS[node.id]
            if node.id not in env:
                raise ExpressionError(f"variable {node.id!r} is not available here")
            return env[node.id]
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            a = self._eval(node.left, env)
            b = self._eval(node.right, env)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            if isinstance(node.op, ast.Div):
                return a / b
            return a ** b
        if isinstance(node, ast.Call):
            return FUNCTIONS[node.func.id](self._eval(node.args[0], env))
        raise ExpressionError(f"cannot evaluate {self.src!r}")

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        env = {"t": t}
        for a in range(x.shape[0]):
            env[f"x{a + 1}"] = x[a]
        env["x"] = x[0]
        out = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[1:]).copy()


def parse_expression(src):
    return Expression(src)


def sample_scalar(expr, grid, times):
    """Evaluate on every (time, node); returns ``(len(times), *shape)``."""
    x = grid.coords()
    return np.array([expr(t, x) for t in times])


def sample_vector(exprs, grid, times):
    """Evaluate one expression per component; missing components are zero."""
    x = grid.coords()
    out = np.zeros((len(times), grid.dim) + grid.shape)
    for a, e in enumerate(exprs[:grid.dim]):
        if e is not None:
            out[:, a] = np.array([e(t, x) for t in times])
    return out
