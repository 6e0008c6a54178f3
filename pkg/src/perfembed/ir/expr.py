"""Expression helpers for the loop-nest IR.

Map extents, memlet subsets and body statements are all written in a small
subset of Python syntax and parsed with :mod:`ast`. This module holds the
pieces shared by the parser, the encoder and the transformations: parsing
with located errors, affine-form extraction and canonical rendering.
"""
from __future__ import annotations

import ast
from typing import Iterable, Mapping

CONST = ""  # key of the constant term in an affine form

AffineForm = dict  # {iterator name: int coefficient, CONST: int}


class IRError(ValueError):
    """Base class for IR errors."""


class IRSyntaxError(IRError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class IRSemanticError(IRError):
    pass


def parse_expr(text: str) -> ast.expr:
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise IRSyntaxError(f"bad expression {text!r}: {exc.msg}", exc.lineno, exc.offset) from None
    return tree.body


def parse_subscript(text: str) -> ast.expr:
    """Parse one subscript entry, which may be an index or a ``lo:hi[:step]`` slice."""
    try:
        tree = ast.parse(f"_[{text.strip()}]", mode="eval")
    except SyntaxError as exc:
        raise IRSyntaxError(f"bad subscript {text!r}: {exc.msg}", exc.lineno, exc.offset) from None
    return tree.body.slice


def parse_statements(text: str) -> list[ast.stmt]:
    try:
        tree = ast.parse(text)
    except SyntaxError as exc:
        raise IRSyntaxError(f"bad body statements: {exc.msg}", exc.lineno, exc.offset) from None
    return tree.body


def names(node: ast.AST) -> set[str]:
    return {n.id for n in ast.walk(node) if isinstance(n, ast.Name)}


def array_reads(node: ast.AST) -> list[ast.Subscript]:
    return [n for n in ast.walk(node) if isinstance(n, ast.Subscript)]


def normalize(text: str) -> str:
    """Canonical spelling of an expression or subscript string."""
    node = parse_subscript(text)
    if isinstance(node, ast.Slice):
        return _unparse_slice(node)
    return ast.unparse(node)


def _unparse_slice(node: ast.Slice) -> str:
    lo = ast.unparse(node.lower) if node.lower is not None else ""
    hi = ast.unparse(node.upper) if node.upper is not None else ""
    out = f"{lo}:{hi}"
    if node.step is not None:
        out += f":{ast.unparse(node.step)}"
    return out


def affine_form(node: ast.AST, iterators: Iterable[str]) -> AffineForm | None:
    """Return ``{name: coeff, CONST: c}`` if ``node`` is an integer affine
    expression of ``iterators`` and constants, otherwise ``None``."""
    its = set(iterators)

    def go(n):
        if isinstance(n, ast.Constant):
            if isinstance(n.value, bool) or not isinstance(n.value, int):
                return None
            return {CONST: n.value}
        if isinstance(n, ast.Name):
            return {n.id: 1, CONST: 0} if n.id in its else None
        if isinstance(n, ast.UnaryOp):
            inner = go(n.operand)
            if inner is None:
                return None
            if isinstance(n.op, ast.USub):
                return {k: -v for k, v in inner.items()}
            if isinstance(n.op, ast.UAdd):
                return inner
            return None
        if isinstance(n, ast.BinOp):
            left, right = go(n.left), go(n.right)
            if left is None or right is None:
                return None
            if isinstance(n.op, (ast.Add, ast.Sub)):
                sign = 1 if isinstance(n.op, ast.Add) else -1
                out = dict(left)
                for k, v in right.items():
                    out[k] = out.get(k, 0) + sign * v
                return out
            if isinstance(n.op, ast.Mult):
                if _is_const(left):
                    c, other = left[CONST], right
                elif _is_const(right):
                    c, other = right[CONST], left
                else:
                    return None
                return {k: c * v for k, v in other.items()}
            return None
        return None

    form = go(node)
    if form is None:
        return None
    form.setdefault(CONST, 0)
    return {k: v for k, v in form.items() if v != 0 or k == CONST}


def _is_const(form: AffineForm) -> bool:
    return all(k == CONST or v == 0 for k, v in form.items())


def render_affine(form: Mapping[str, int], order: Iterable[str] = ()) -> str:
    """Render an affine form canonically: iterators in ``order`` first, then
    the remaining ones alphabetically, then the constant."""
    order = list(order)
    keys = [k for k in order if form.get(k, 0)]
    keys += sorted(k for k in form if k != CONST and k not in order and form[k])
    parts: list[str] = []
    for k in keys:
        c = form[k]
        term = k if abs(c) == 1 else f"{abs(c)} * {k}"
        if not parts:
            parts.append(term if c > 0 else f"-{term}")
        else:
            parts.append(f"+ {term}" if c > 0 else f"- {term}")
    c = form.get(CONST, 0)
    if not parts:
        return str(c)
    if c:
        parts.append(f"+ {c}" if c > 0 else f"- {-c}")
    return " ".join(parts)


def substitute(form: AffineForm, name: str, value: AffineForm) -> AffineForm:
    """Replace ``name`` in ``form`` by the affine form ``value``."""
    c = form.get(name, 0)
    out = {k: v for k, v in form.items() if k != name}
    if c:
        for k, v in value.items():
            out[k] = out.get(k, 0) + c * v
    out.setdefault(CONST, 0)
    return {k: v for k, v in out.items() if v != 0 or k == CONST}


def min_args(node: ast.AST) -> list[ast.expr] | None:
    """If ``node`` is a call ``min(a, b, ...)`` return its arguments."""
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id == "min"
        and not node.keywords
    ):
        return list(node.args)
    return None
