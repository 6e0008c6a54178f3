"""Structural analysis of body statements.

A body is a block of statements in a Python subset:

* ``t = expr``, ``t += expr`` on scalar locals
* ``A[s, ...] = expr`` stores, ``A[s] += expr`` sum reductions and the
  patterns ``A[s] = min(A[s], expr)`` / ``max`` for min/max reductions
* ``if``/``else``, ``for v in range(lo, hi[, step])`` sequential loops, ``break``,
  ``pass``

Expressions use ``+ - * / // %``, comparisons, ``and or not``, the ternary
``a if c else b`` and the calls ``min max abs sqrt int float``.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass

from .expr import IRSemanticError, parse_statements

BUILTINS = {"min", "max", "abs", "sqrt", "int", "float"}

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.FloorDiv, ast.Mod)
_CMPOPS = (ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq)


@dataclass(frozen=True)
class Access:
    array: str
    subscripts: tuple[str, ...]
    direction: str  # "read" | "write"
    reduction: str | None = None

    @property
    def key(self) -> tuple:
        return (self.array, self.subscripts, self.direction, self.reduction)


def subscript_list(node: ast.Subscript) -> list[ast.expr]:
    sl = node.slice
    return list(sl.elts) if isinstance(sl, ast.Tuple) else [sl]


def reduction_pattern(stmt: ast.stmt) -> tuple[ast.Subscript, str, ast.expr] | None:
    """Recognize ``A[s] += e`` and ``A[s] = min/max(A[s], e)``."""
    if isinstance(stmt, ast.AugAssign) and isinstance(stmt.target, ast.Subscript):
        if isinstance(stmt.op, ast.Add):
            return stmt.target, "sum", stmt.value
        return None
    if isinstance(stmt, ast.Assign) and len(stmt.targets) == 1 and isinstance(stmt.targets[0], ast.Subscript):
        target = stmt.targets[0]
        call = stmt.value
        if (
            isinstance(call, ast.Call)
            and isinstance(call.func, ast.Name)
            and call.func.id in ("min", "max")
            and len(call.args) == 2
            and isinstance(call.args[0], ast.Subscript)
            and ast.dump(call.args[0]) == ast.dump(target)
        ):
            return target, call.func.id, call.args[1]
    return None


class BodyInfo:
    """Parsed body with its ordered array accesses and local names."""

    def __init__(self, statements: str):
        self.source = statements
        self.tree = parse_statements(statements)
        self.accesses: list[Access] = []
        self.locals: list[str] = []
        self.loop_vars: list[str] = []
        self.has_control_flow = False
        self._seen: set[tuple] = set()
        self._block(self.tree, in_loop=False)

    # -- collection -----------------------------------------------------
    def _add(self, acc: Access) -> None:
        if acc.key not in self._seen:
            self._seen.add(acc.key)
            self.accesses.append(acc)

    def _reads(self, node: ast.AST) -> None:
        """Record array reads in evaluation order (subscripts before the access)."""
        if isinstance(node, ast.Subscript):
            if not isinstance(node.value, ast.Name):
                raise IRSemanticError("array accesses must name an array directly")
            subs = subscript_list(node)
            for s in subs:
                if isinstance(s, ast.Slice):
                    raise IRSemanticError("slices are not allowed in body accesses")
                self._reads(s)
            self._add(Access(node.value.id, tuple(ast.unparse(s) for s in subs), "read"))
            return
        self._check_expr(node)
        for child in ast.iter_child_nodes(node):
            if isinstance(child, ast.expr):
                self._reads(child)

    def _check_expr(self, node: ast.AST) -> None:
        ok = (
            ast.Constant, ast.Name, ast.BinOp, ast.UnaryOp, ast.Compare, ast.BoolOp,
            ast.IfExp, ast.Call, ast.Subscript,
        )
        if not isinstance(node, ok):
            raise IRSemanticError(f"unsupported expression {ast.unparse(node)!r}")
        if isinstance(node, ast.BinOp) and not isinstance(node.op, _BINOPS):
            raise IRSemanticError(f"unsupported operator in {ast.unparse(node)!r}")
        if isinstance(node, ast.UnaryOp) and not isinstance(node.op, (ast.USub, ast.UAdd, ast.Not)):
            raise IRSemanticError(f"unsupported operator in {ast.unparse(node)!r}")
        if isinstance(node, ast.Compare):
            if len(node.ops) != 1 or not isinstance(node.ops[0], _CMPOPS):
                raise IRSemanticError(f"only single comparisons are supported: {ast.unparse(node)!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in BUILTINS or node.keywords:
                raise IRSemanticError(f"unsupported call {ast.unparse(node)!r}")
            want = {"min": (2,), "max": (2,), "abs": (1,), "sqrt": (1,), "int": (1,), "float": (1,)}
            if len(node.args) not in want[node.func.id]:
                raise IRSemanticError(f"wrong argument count in {ast.unparse(node)!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float, bool)):
            raise IRSemanticError(f"unsupported constant {node.value!r}")

    def _block(self, stmts: list[ast.stmt], in_loop: bool) -> None:
        for stmt in stmts:
            self._stmt(stmt, in_loop)

    def _stmt(self, stmt: ast.stmt, in_loop: bool) -> None:
        red = reduction_pattern(stmt)
        if red is not None:
            target, kind, value = red
            self._reads(value)
            for s in subscript_list(target):
                self._reads(s)
            self._add(Access(target.value.id, tuple(ast.unparse(s) for s in subscript_list(target)), "write", kind))
            return
        if isinstance(stmt, ast.Assign):
            if len(stmt.targets) != 1:
                raise IRSemanticError("chained assignment is not supported")
            target = stmt.targets[0]
            self._reads(stmt.value)
            if isinstance(target, ast.Name):
                if target.id not in self.locals:
                    self.locals.append(target.id)
            elif isinstance(target, ast.Subscript) and isinstance(target.value, ast.Name):
                for s in subscript_list(target):
                    self._reads(s)
                self._add(Access(target.value.id, tuple(ast.unparse(s) for s in subscript_list(target)), "write"))
            else:
                raise IRSemanticError(f"unsupported assignment target {ast.unparse(target)!r}")
        elif isinstance(stmt, ast.AugAssign):
            if not isinstance(stmt.target, ast.Name):
                raise IRSemanticError("only '+=' reductions are supported on arrays")
            if not isinstance(stmt.op, _BINOPS):
                raise IRSemanticError("unsupported augmented assignment")
            if stmt.target.id not in self.locals:
                raise IRSemanticError(f"local {stmt.target.id!r} used before assignment")
            self._reads(stmt.value)
        elif isinstance(stmt, ast.If):
            self.has_control_flow = True
            self._reads(stmt.test)
            self._block(stmt.body, in_loop)
            self._block(stmt.orelse, in_loop)
        elif isinstance(stmt, ast.For):
            self.has_control_flow = True
            it = stmt.iter
            if (
                not isinstance(stmt.target, ast.Name)
                or not isinstance(it, ast.Call)
                or not isinstance(it.func, ast.Name)
                or it.func.id != "range"
                or not 1 <= len(it.args) <= 3
                or stmt.orelse
            ):
                raise IRSemanticError("sequential loops must be 'for v in range(...)'")
            for a in it.args:
                self._reads(a)
            if stmt.target.id not in self.loop_vars:
                self.loop_vars.append(stmt.target.id)
            self._block(stmt.body, in_loop=True)
        elif isinstance(stmt, ast.Break):
            if not in_loop:
                raise IRSemanticError("'break' outside a sequential loop")
        elif isinstance(stmt, ast.Pass):
            pass
        else:
            raise IRSemanticError(f"unsupported statement {ast.unparse(stmt)!r}")
