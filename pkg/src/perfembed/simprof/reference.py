"""Plain reference interpreter.

Walks the nest directly in sequential iteration order with numpy scalars
(``np.float32`` arithmetic for ``f32``), sharing only the type rules with
the simulator. It also counts instructions with the documented weights so
the simulator's instruction totals can be checked against it:

* 1 per arithmetic, comparison, logical or explicit-cast op, load and store
  (operations inside subscripts are address arithmetic and free)
* 3 per reduction store (load, op, store); register-storage arrays count
  only the op of a reduction and nothing for plain accesses
* loops: 1 at entry plus 2 per iteration; the parallel loop has no entry cost
  per thread, just 1 for the region
* ``if``: 1 for the test, plus 1 for the jump over the ``else`` block when
  the taken branch is the ``then`` block of an ``if``/``else``; ``break`` 1
"""
from __future__ import annotations

import ast

import numpy as np

from ..ir.body import reduction_pattern, subscript_list
from ..ir.expr import parse_expr
from ..ir.nest import LoopNest
from .lang import ARITH, BOOL, COMPARE, F32, F64, INT, WEAK, Typing, concrete
from .simulate import NUMPY_DTYPE, InputBindings, SimulationError, _shape_of


class _Break(Exception):
    pass


def _conv(v, t):
    t = concrete(t)
    if t == INT:
        return int(v)
    if t == F32:
        return np.float32(v)
    if t == F64:
        return np.float64(v)
    return bool(v != 0)


class ReferenceInterpreter:
    def __init__(self, nest: LoopNest, inputs: InputBindings):
        self.nest = nest
        self.typing = Typing(nest)
        shapes = _shape_of(nest, inputs)
        self.arrays = {}
        self.regarrays = set()
        for a in nest.arrays:
            # i32/i64 values are kept as int64, bool as bool
            dt = NUMPY_DTYPE[a.elem_type]
            if a.elem_type in ("i32",):
                dt = np.int64
            given = inputs.arrays.get(a.name)
            arr = np.zeros(shapes[a.name], dtype=dt)
            if given is not None:
                arr[...] = np.asarray(given).astype(dt)
            self.arrays[a.name] = arr
            if a.storage == "register":
                self.regarrays.add(a.name)
        self.elem = {a.name: a.elem_type for a in nest.arrays}
        self.env: dict = {}
        self.instructions = 0

    def run(self):
        with np.errstate(all="ignore"):
            self._maps(0)
        out = {}
        for a in self.nest.arrays:
            out[a.name] = self.arrays[a.name].astype(NUMPY_DTYPE[a.elem_type])
        return out

    # -- map scopes ---------------------------------------------------------
    def _int(self, text, count: bool = True):
        return self._int_node(parse_expr(text), count)

    def _int_node(self, n, count: bool = True):
        if isinstance(n, ast.Constant):
            return n.value
        if isinstance(n, ast.Name):
            return self.env[n.id]
        if isinstance(n, ast.UnaryOp):
            self.instructions += count
            return -self._int_node(n.operand, count)
        if isinstance(n, ast.BinOp):
            x, y = self._int_node(n.left, count), self._int_node(n.right, count)
            self.instructions += count
            if isinstance(n.op, (ast.FloorDiv, ast.Mod)) and y == 0:
                raise SimulationError("integer division by zero")
            return {ast.Add: lambda: x + y, ast.Sub: lambda: x - y, ast.Mult: lambda: x * y,
                    ast.FloorDiv: lambda: x // y, ast.Mod: lambda: x % y}[type(n.op)]()
        if isinstance(n, ast.Call):
            vals = [self._int_node(a, count) for a in n.args]
            self.instructions += count * (len(vals) - 1)
            return min(vals) if n.func.id == "min" else max(vals)
        raise SimulationError(f"bad extent {ast.unparse(n)}")

    def _maps(self, idx: int):
        maps = self.nest.maps
        if idx == len(maps):
            self._block(self.typing.body)
            return
        m = maps[idx]
        self._params(m, 0, idx)

    def _params(self, m, j, idx):
        if j == len(m.params):
            self._maps(idx + 1)
            return
        ext = m.extents[j]
        if ext.is_dynamic:
            b = ext.binding
            i = self._int(b.index, count=False)
            begin = self._read(b.array, (i,))
            end = self._read(b.array, (i + 1,))
        else:
            begin, end = self._int(ext.begin), self._int(ext.end)
        step = self._int(ext.step)
        rng = range(begin, end, step)
        self.instructions += 1  # loop entry (or region start)
        for v in rng:
            self.env[m.params[j]] = v
            self._params(m, j + 1, idx)
            self.instructions += 2

    # -- memory -------------------------------------------------------------
    def _check(self, array, idx):
        shape = self.arrays[array].shape
        for k, (v, s) in enumerate(zip(idx, shape)):
            if not 0 <= v < s:
                raise SimulationError(f"out-of-bounds access to array {array!r}: index {v} in dimension {k}")

    def _read(self, array, idx):
        self._check(array, idx)
        if array not in self.regarrays:
            self.instructions += 1
        v = self.arrays[array][idx]
        et = self.elem[array]
        if et == "f32":
            return np.float32(v)
        if et == "f64":
            return np.float64(v)
        if et == "bool":
            return bool(v)
        return int(v)

    # -- statements -----------------------------------------------------------
    def _block(self, stmts):
        for s in stmts:
            self._stmt(s)

    def _subs(self, node):
        return tuple(int(_conv(self.expr(e, free=True), INT)) for e in subscript_list(node))

    def _stmt(self, s):
        ty = self.typing
        red = reduction_pattern(s)
        if red is not None:
            target, kind, value = red
            op_t = ty.op_type[id(s)] if kind == "sum" else ty.op_type[id(s.value)]
            v = _conv(self.expr(value), op_t)
            idx = self._subs(target)
            name = target.value.id
            self._check(name, idx)
            et = self.elem[name]
            old = _conv(self.arrays[name][idx], {"f32": F32, "f64": F64, "bool": BOOL}.get(et, INT))
            old = _conv(old, op_t)
            if kind == "sum":
                r = old + v
            elif kind == "min":
                r = v if v < old else old
            else:
                r = v if v > old else old
            self.instructions += 1 if name in self.regarrays else 3
            self._write(name, idx, r)
            return
        if isinstance(s, ast.Assign):
            tgt = s.targets[0]
            v = self.expr(s.value)
            if isinstance(tgt, ast.Name):
                self.env[tgt.id] = _conv(v, ty.local_types[tgt.id])
            else:
                idx = self._subs(tgt)
                name = tgt.value.id
                self._check(name, idx)
                if name not in self.regarrays:
                    self.instructions += 1
                self._write(name, idx, v)
        elif isinstance(s, ast.AugAssign):
            name = s.target.id
            v = self.expr(s.value)
            op_t = ty.op_type[id(s)]
            r = self._arith(type(s.op), _conv(self.env[name], op_t), _conv(v, op_t), op_t)
            self.instructions += 1
            self.env[name] = _conv(r, ty.local_types.get(name, INT))
        elif isinstance(s, ast.If):
            c = self._truth(s.test)
            self.instructions += 1
            if c:
                self._block(s.body)
                if s.orelse:
                    self.instructions += 1
            else:
                self._block(s.orelse)
        elif isinstance(s, ast.For):
            args = [int(_conv(self.expr(a), INT)) for a in s.iter.args]
            self.instructions += 1
            try:
                for v in range(*args):
                    self.env[s.target.id] = v
                    try:
                        self._block(s.body)
                    finally:
                        self.instructions += 2
            except _Break:
                pass
        elif isinstance(s, ast.Break):
            self.instructions += 1
            # FOR_NEXT of the interrupted iteration is not executed
            self.instructions -= 2
            raise _Break
        elif isinstance(s, ast.Pass):
            pass

    def _write(self, name, idx, v):
        et = self.elem[name]
        if et == "f32":
            self.arrays[name][idx] = np.float32(v)
        elif et == "f64":
            self.arrays[name][idx] = np.float64(v)
        elif et == "bool":
            self.arrays[name][idx] = bool(v != 0)
        else:
            self.arrays[name][idx] = int(v)

    def _truth(self, n):
        return bool(_conv(self.expr(n), BOOL))

    # -- expressions ----------------------------------------------------------
    @staticmethod
    def _arith(op, x, y, t):
        if op is ast.Add:
            r = x + y
        elif op is ast.Sub:
            r = x - y
        elif op is ast.Mult:
            r = x * y
        elif op is ast.Div:
            r = x / y
        elif op is ast.FloorDiv:
            if y == 0:
                raise SimulationError("integer division by zero")
            r = x // y
        else:
            if y == 0:
                raise SimulationError("integer division by zero")
            r = x % y
        return _conv(r, t)

    def _operand(self, n, op_t, free):
        if isinstance(n, ast.Constant) and not isinstance(n.value, bool):
            return _conv(n.value, op_t)
        return _conv(self.expr(n, free), op_t)

    def expr(self, n, free: bool = False):
        ty = self.typing
        t = ty.types[id(n)]
        cost = 0 if free else 1
        if isinstance(n, ast.Constant):
            return _conv(n.value, t) if t != WEAK else float(n.value)
        if isinstance(n, ast.Name):
            if n.id in ("True", "False"):
                return n.id == "True"
            return self.env[n.id]
        if isinstance(n, ast.Subscript):
            return self._read(n.value.id, self._subs(n))
        if isinstance(n, ast.BinOp):
            op_t = ty.op_type[id(n)]
            x = self._operand(n.left, op_t, free)
            y = self._operand(n.right, op_t, free)
            self.instructions += cost
            return self._arith(type(n.op), x, y, op_t)
        if isinstance(n, ast.UnaryOp):
            if isinstance(n.op, ast.UAdd):
                return self.expr(n.operand, free)
            if isinstance(n.op, ast.Not):
                x = _conv(self.expr(n.operand, free), BOOL)
                self.instructions += cost
                return not x
            x = self._operand(n.operand, concrete(t), free)
            self.instructions += cost
            return _conv(-x, concrete(t))
        if isinstance(n, ast.Compare):
            op_t = ty.op_type[id(n)]
            x = self._operand(n.left, op_t, free)
            y = self._operand(n.comparators[0], op_t, free)
            self.instructions += cost
            op = COMPARE[type(n.ops[0])]
            return {"lt": x < y, "le": x <= y, "gt": x > y, "ge": x >= y, "eq": x == y, "ne": x != y}[op]
        if isinstance(n, ast.BoolOp):
            vals = [bool(_conv(self.expr(v, free), BOOL)) for v in n.values]
            self.instructions += cost * (len(vals) - 1)
            return all(vals) if isinstance(n.op, ast.And) else any(vals)
        if isinstance(n, ast.IfExp):
            rt = concrete(t)
            c = self._truth(n.test)
            self.instructions += 1
            if c:
                v = self._operand(n.body, rt, free)
                self.instructions += 1
            else:
                v = self._operand(n.orelse, rt, free)
            return v
        if isinstance(n, ast.Call):
            fn = n.func.id
            if fn in ("min", "max"):
                op_t = ty.op_type[id(n)]
                x = self._operand(n.args[0], op_t, free)
                y = self._operand(n.args[1], op_t, free)
                self.instructions += cost
                if fn == "min":
                    return y if y < x else x
                return y if y > x else x
            a = n.args[0]
            at = ty.types[id(a)]
            if fn == "abs":
                x = self._operand(a, concrete(t), free)
                self.instructions += cost
                return abs(x)
            if fn == "sqrt":
                x = self._operand(a, t, free)
                self.instructions += cost
                return np.sqrt(x)
            x = self.expr(a, free)
            dst = INT if fn == "int" else F64
            if concrete(at) != dst:
                self.instructions += cost
            return _conv(x, dst)
        raise SimulationError(f"unsupported expression {ast.unparse(n)}")


def reference_run(nest: LoopNest, inputs: InputBindings):
    """Return ``(outputs, instructions)`` from the reference interpreter."""
    interp = ReferenceInterpreter(nest, inputs)
    out = interp.run()
    return out, interp.instructions
