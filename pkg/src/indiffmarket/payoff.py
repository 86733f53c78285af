"""Tiny arithmetic grammar for terminal payoffs.

Payoff expressions are functions of the terminal Brownian value: names
``B`` (alias for the first component) and ``B1`` .. ``Bd``, numeric
constants, ``+``, ``-``, ``*`` and parentheses.  Parsed through the ast
module with a strict whitelist; anything else is rejected.
"""

from __future__ import annotations

import ast

import numpy as np

__all__ = ["PayoffExpression"]

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)
_ALLOWED_UNARY = (ast.UAdd, ast.USub)


class PayoffExpression:
    """Compiled payoff expression, evaluated on arrays of terminal B."""

    def __init__(self, text: str):
        self.text = text
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"bad payoff expression {text!r}: {exc}") from None
        self._validate(tree.body)
        self._code = compile(tree, f"<payoff {text!r}>", "eval")

    def _validate(self, node: ast.AST) -> None:
        if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _ALLOWED_UNARY):
            self._validate(node.operand)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        elif isinstance(node, ast.Name):
            if not (node.id == "B" or (node.id.startswith("B") and node.id[1:].isdigit())):
                raise ValueError(f"unknown name {node.id!r} in payoff expression")
        else:
            raise ValueError(
                f"unsupported construct {type(node).__name__} in payoff expression"
            )

    def __call__(self, b_terminal: np.ndarray) -> np.ndarray:
        """Evaluate on terminal values, shape (n, d) -> (n,)."""
        b = np.atleast_2d(np.asarray(b_terminal, dtype=float))
        names = {"B": b[:, 0]}
        for j in range(b.shape[1]):
            names[f"B{j + 1}"] = b[:, j]
        out = eval(self._code, {"__builtins__": {}}, names)
        return np.broadcast_to(np.asarray(out, dtype=float), (b.shape[0],)).copy()

    def __repr__(self):
        return f"PayoffExpression({self.text!r})"
