"""Static typing of body statements.

Values have one of four types: ``int``, ``f32``, ``f64`` and ``bool``. Float
literals are *weak*: they take the float type of the other operand and
default to ``f64``. Binary operands are converted to the joined type before
the operation, so ``f32`` arithmetic stays in single precision. A local takes
the type of its first (textual) assignment; later assignments convert to it.
The simulator's compiler and the reference interpreter both consume this
pass, so they agree on every conversion.
"""
from __future__ import annotations

import ast

from ..ir.expr import IRSemanticError
from ..ir.nest import LoopNest

WEAK = "weak"  # float literal before materialization
INT, F32, F64, BOOL = "int", "f32", "f64", "bool"

ARRAY_TYPE = {"f32": F32, "f64": F64, "i32": INT, "i64": INT, "bool": BOOL}

ARITH = {ast.Add: "add", ast.Sub: "sub", ast.Mult: "mul", ast.Div: "div", ast.FloorDiv: "floordiv", ast.Mod: "mod"}
COMPARE = {ast.Lt: "lt", ast.LtE: "le", ast.Gt: "gt", ast.GtE: "ge", ast.Eq: "eq", ast.NotEq: "ne"}


def join(a: str, b: str) -> str:
    if F64 in (a, b):
        return F64
    if F32 in (a, b):
        return F32
    if WEAK in (a, b):
        return WEAK if a == b else F64
    return INT


def concrete(t: str) -> str:
    return F64 if t == WEAK else t


def is_float(t: str) -> bool:
    return t in (F32, F64, WEAK)


class Typing:
    """Types of every expression node of a nest body, keyed by ``id(node)``.

    ``op_type[id]`` is the type operands are converted to before the node's
    operation; ``types[id]`` is the result type.
    """

    def __init__(self, nest: LoopNest):
        self.nest = nest
        self.arrays = {a.name: ARRAY_TYPE[a.elem_type] for a in nest.arrays}
        self.env: dict[str, str] = {p: INT for p in nest.params}
        self.types: dict[int, str] = {}
        self.op_type: dict[int, str] = {}
        self.local_types: dict[str, str] = {}
        self.body = nest.body_info.tree
        self._block(self.body)

    def _block(self, stmts):
        for s in stmts:
            self._stmt(s)

    def _stmt(self, s):
        if isinstance(s, ast.Assign):
            vt = self.expr(s.value)
            tgt = s.targets[0]
            if isinstance(tgt, ast.Name):
                if tgt.id in self.arrays:
                    raise IRSemanticError(f"cannot assign to array name {tgt.id!r}")
                if tgt.id not in self.env:
                    self.env[tgt.id] = concrete(vt)
                    self.local_types[tgt.id] = self.env[tgt.id]
            else:
                self._subscripts(tgt)
        elif isinstance(s, ast.AugAssign):
            vt = self.expr(s.value)
            if isinstance(s.target, ast.Name):
                name = s.target.id
                if name not in self.env:
                    raise IRSemanticError(f"local {name!r} used before assignment")
                t = self.env[name]
                op = join(t, vt)
                if isinstance(s.op, ast.Div) and op in (INT, BOOL):
                    op = F64
                self._check_int_op(s.op, op, s)
                self.op_type[id(s)] = concrete(op)
            else:
                self._subscripts(s.target)
                at = self.arrays[s.target.value.id]
                self.op_type[id(s)] = concrete(join(at, vt))
        elif isinstance(s, ast.If):
            self.expr(s.test)
            self._block(s.body)
            self._block(s.orelse)
        elif isinstance(s, ast.For):
            for a in s.iter.args:
                t = self.expr(a)
                if t not in (INT, BOOL):
                    raise IRSemanticError("range bounds must be integers")
            self.env[s.target.id] = INT
            self._block(s.body)

    def _subscripts(self, node: ast.Subscript):
        sl = node.slice
        for e in (sl.elts if isinstance(sl, ast.Tuple) else [sl]):
            t = self.expr(e)
            if t not in (INT, BOOL):
                raise IRSemanticError(f"subscript {ast.unparse(e)!r} is not an integer")

    @staticmethod
    def _check_int_op(op, t, node):
        if isinstance(op, (ast.FloorDiv, ast.Mod)) and t not in (INT, BOOL):
            raise IRSemanticError(f"'//' and '%' need integer operands: {ast.unparse(node)!r}")

    def expr(self, n) -> str:
        t = self._expr(n)
        self.types[id(n)] = t
        return t

    def _expr(self, n) -> str:
        if isinstance(n, ast.Constant):
            if isinstance(n.value, bool):
                return BOOL
            return INT if isinstance(n.value, int) else WEAK
        if isinstance(n, ast.Name):
            if n.id in ("True", "False"):
                return BOOL
            if n.id not in self.env:
                if n.id in self.arrays:
                    raise IRSemanticError(f"array {n.id!r} used without subscript")
                raise IRSemanticError(f"unknown name {n.id!r}")
            return self.env[n.id]
        if isinstance(n, ast.Subscript):
            self._subscripts(n)
            return self.arrays[n.value.id]
        if isinstance(n, ast.BinOp):
            a, b = self.expr(n.left), self.expr(n.right)
            t = join(a, b)
            if isinstance(n.op, ast.Div) and t in (INT, BOOL):
                t = F64
            self._check_int_op(n.op, t, n)
            self.op_type[id(n)] = concrete(t)
            return t
        if isinstance(n, ast.UnaryOp):
            a = self.expr(n.operand)
            if isinstance(n.op, ast.Not):
                return BOOL
            return INT if a == BOOL else a
        if isinstance(n, ast.Compare):
            a, b = self.expr(n.left), self.expr(n.comparators[0])
            self.op_type[id(n)] = concrete(join(a, b))
            return BOOL
        if isinstance(n, ast.BoolOp):
            for v in n.values:
                self.expr(v)
            return BOOL
        if isinstance(n, ast.IfExp):
            self.expr(n.test)
            a, b = self.expr(n.body), self.expr(n.orelse)
            t = join(a, b) if a != b else a
            self.op_type[id(n)] = concrete(t)
            return t
        if isinstance(n, ast.Call):
            fn = n.func.id
            args = [self.expr(a) for a in n.args]
            if fn in ("min", "max"):
                t = join(*args)
                self.op_type[id(n)] = concrete(t)
                return t
            if fn == "abs":
                return INT if args[0] == BOOL else args[0]
            if fn == "sqrt":
                return F32 if args[0] == F32 else F64
            if fn == "int":
                return INT
            if fn == "float":
                return F64
        raise IRSemanticError(f"unsupported expression {ast.unparse(n)!r}")
