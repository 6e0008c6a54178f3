"""Lowering of a loop nest to the simulator's bytecode.

The program is a table of int64 rows ``[op, a, b, c, d, e]`` over a float64
register file. Map scopes become loops (the parallel one becomes a
``PAR_BEGIN``/``PAR_NEXT`` region), the body becomes straight-line code with
branches. Every memory access goes through a *slot* that names the array and
the registers holding its subscripts.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass

import numpy as np

from ..ir.body import reduction_pattern, subscript_list
from ..ir.expr import IRSemanticError, parse_expr
from ..ir.nest import LoopNest
from .lang import ARITH, BOOL, COMPARE, F32, F64, INT, WEAK, Typing, concrete

# opcodes
HALT, BIN, UN, CAST, MOV, LOAD, STORE, JMP, BRF, FOR_INIT, FOR_NEXT, PAR_BEGIN, PAR_NEXT = range(13)
OPNAMES = ("HALT", "BIN", "UN", "CAST", "MOV", "LOAD", "STORE", "JMP", "BRF", "FOR_INIT", "FOR_NEXT",
           "PAR_BEGIN", "PAR_NEXT")

# type codes
TCODE = {INT: 0, F32: 1, F64: 2, BOOL: 3, WEAK: 2}
NOCOUNT = 4  # flag bit in the type-code column

# BIN sub-ops
BIN_SUB = {"add": 0, "sub": 1, "mul": 2, "div": 3, "floordiv": 4, "mod": 5, "min": 6, "max": 7,
           "lt": 8, "le": 9, "gt": 10, "ge": 11, "eq": 12, "ne": 13, "and": 14, "or": 15}
UN_NEG, UN_NOT, UN_ABS, UN_SQRT = range(4)
RED_CODE = {None: 0, "sum": 1, "min": 2, "max": 3}

MAXR = 8  # maximum array rank handled by the simulator

# loop table columns
L_VAR, L_BEGIN, L_END, L_STEP, L_BODY, L_EXIT, L_VW, L_KIND, L_ASSIGN, L_CHUNK, L_THREADS, L_BRANCH = range(12)
LOOP_COLS = 12


@dataclass
class Program:
    code: np.ndarray          # (n, 6) int64
    regs: np.ndarray          # initial register file
    loops: np.ndarray         # (nloops, LOOP_COLS) int64
    slots: np.ndarray         # (nslots, 2 + MAXR) int64
    slot_array: list          # slot -> array name
    branch_init: np.ndarray   # initial predictor state per branch id
    param_regs: dict          # map param / loop var -> register
    array_ids: dict           # array name -> id

    def dump(self) -> str:
        lines = []
        for pc, row in enumerate(self.code):
            lines.append(f"{pc:4d} {OPNAMES[row[0]]:<10s} " + " ".join(str(int(x)) for x in row[1:]))
        return "\n".join(lines)


class _Compiler:
    def __init__(self, nest: LoopNest, outer_limit: int | None = None):
        self.nest = nest
        self.typing = Typing(nest)
        self.code: list[list[int]] = []
        self.regs: list[float] = []
        self.consts: dict[tuple, int] = {}
        self.env: dict[str, int] = {}
        self.env_type: dict[str, str] = {}
        self.loops: list[list[int]] = []
        self.slots: list[list[int]] = []
        self.slot_array: list[str] = []
        self.branch_init: list[int] = []
        self.array_ids = {a.name: i for i, a in enumerate(nest.arrays)}
        self.arrays = {a.name: a for a in nest.arrays}
        self.outer_limit = outer_limit
        self.break_stack: list[list[int]] = []

    # -- emission helpers -------------------------------------------------
    def reg(self, init: float = 0.0) -> int:
        self.regs.append(init)
        return len(self.regs) - 1

    def const(self, value, t: str) -> int:
        if t == F32:
            v = float(np.float32(value))
        elif t == INT:
            v = float(int(value))
        elif t == BOOL:
            v = 1.0 if value else 0.0
        else:
            v = float(value)
        key = (t, v)
        if key not in self.consts:
            self.consts[key] = self.reg(v)
        return self.consts[key]

    def emit(self, op, a=0, b=0, c=0, d=0, e=0) -> int:
        self.code.append([op, a, b, c, d, e])
        return len(self.code) - 1

    def branch(self, init: int) -> int:
        self.branch_init.append(init)
        return len(self.branch_init) - 1

    def conv(self, r: int, src: str, dst: str, count: bool = False) -> int:
        src, dst = concrete(src), concrete(dst)
        if src == dst or (src == BOOL and dst == INT):
            return r
        out = self.reg()
        self.emit(CAST, out, r, 0, TCODE[dst], 0 if count else NOCOUNT)
        return out

    def bin(self, sub: str, x: int, y: int, t: str, count: bool = True) -> int:
        out = self.reg()
        self.emit(BIN, out, x, y, BIN_SUB[sub], TCODE[t] | (0 if count else NOCOUNT))
        return out

    # -- structure ----------------------------------------------------------
    def compile(self) -> Program:
        for p in self.nest.params:
            self.env[p] = self.reg()
            self.env_type[p] = INT
        self._maps(0)
        self.emit(HALT)
        loops = np.array(self.loops, dtype=np.int64).reshape(-1, LOOP_COLS)
        slots = np.array(self.slots, dtype=np.int64).reshape(-1, 2 + MAXR)
        return Program(
            code=np.array(self.code, dtype=np.int64).reshape(-1, 6),
            regs=np.array(self.regs, dtype=np.float64),
            loops=loops,
            slots=slots,
            slot_array=self.slot_array,
            branch_init=np.array(self.branch_init or [0], dtype=np.int8),
            param_regs=dict(self.env),
            array_ids=self.array_ids,
        )

    def _maps(self, idx: int) -> None:
        maps = self.nest.maps
        if idx == len(maps):
            self._block(self.typing.body)
            return
        m = maps[idx]
        innermost = idx == len(maps) - 1
        n = len(m.params)
        frames = []
        for j, (p, ext) in enumerate(zip(m.params, m.extents)):
            begin, end, step = self._extent(m, ext)
            if idx == 0 and j == 0 and self.outer_limit is not None:
                lim = self.const(self.outer_limit, INT)
                span = self.bin("mul", lim, step, INT, count=False)
                cap = self.bin("add", begin, span, INT, count=False)
                end = self.bin("min", end, cap, INT, count=False)
            sched = m.schedule
            parallel = sched.parallel and j == 0 and self.outer_limit is None
            vw = sched.vector_width if innermost and j == n - 1 else 1
            row = [0] * LOOP_COLS
            row[L_VAR], row[L_BEGIN], row[L_END], row[L_STEP] = self.env[p], begin, end, step
            row[L_VW] = vw
            row[L_KIND] = 1 if parallel else 0
            row[L_ASSIGN] = 1 if sched.assignment == "dynamic" else 0
            row[L_CHUNK] = sched.chunk or 1
            row[L_THREADS] = sched.threads
            row[L_BRANCH] = self.branch(1)
            lid = len(self.loops)
            self.loops.append(row)
            start = self.emit(PAR_BEGIN if parallel else FOR_INIT, lid)
            row[L_BODY] = start + 1
            frames.append((lid, parallel))
        self._maps(idx + 1)
        self._close(reversed(frames))

    def _close(self, frames) -> None:
        for lid, parallel in frames:
            self.emit(PAR_NEXT if parallel else FOR_NEXT, lid)
            self.loops[lid][L_EXIT] = len(self.code)

    def _extent(self, m, ext):
        if ext.is_dynamic:
            if ext.binding is None:
                raise IRSemanticError(f"dynamic extent of {m.id} has no binding")
            b = ext.binding
            idx = self._int_expr(parse_expr(b.index), count=False)
            begin = self._load(b.array, [idx])
            one = self.const(1, INT)
            idx1 = self.bin("add", idx, one, INT, count=False)
            end = self._load(b.array, [idx1])
        else:
            begin = self._int_expr(parse_expr(ext.begin))
            end = self._int_expr(parse_expr(ext.end))
        step = self._int_expr(parse_expr(ext.step))
        return begin, end, step

    def _int_expr(self, n, count: bool = True) -> int:
        """Integer expressions over map params (extents, bindings)."""
        if isinstance(n, ast.Constant) and isinstance(n.value, int):
            return self.const(n.value, INT)
        if isinstance(n, ast.Name) and n.id in self.env:
            return self.env[n.id]
        if isinstance(n, ast.UnaryOp) and isinstance(n.op, ast.USub):
            zero = self.const(0, INT)
            return self.bin("sub", zero, self._int_expr(n.operand, count), INT, count)
        if isinstance(n, ast.BinOp) and type(n.op) in ARITH and not isinstance(n.op, ast.Div):
            x, y = self._int_expr(n.left, count), self._int_expr(n.right, count)
            return self.bin(ARITH[type(n.op)], x, y, INT, count)
        if isinstance(n, ast.Call) and isinstance(n.func, ast.Name) and n.func.id in ("min", "max"):
            args = [self._int_expr(a, count) for a in n.args]
            out = args[0]
            for a in args[1:]:
                out = self.bin(n.func.id, out, a, INT, count)
            return out
        raise IRSemanticError(f"unsupported extent expression {ast.unparse(n)!r}")

    def _slot(self, array: str, sub_regs: list[int]) -> int:
        a = self.arrays[array]
        if len(sub_regs) != a.ndim:
            raise IRSemanticError(f"access to {array} has wrong rank")
        if a.ndim > MAXR:
            raise IRSemanticError(f"array {array} exceeds rank {MAXR}")
        row = [self.array_ids[array], a.ndim] + sub_regs + [0] * (MAXR - len(sub_regs))
        self.slots.append(row)
        self.slot_array.append(array)
        return len(self.slots) - 1

    def _load(self, array: str, sub_regs: list[int]) -> int:
        slot = self._slot(array, sub_regs)
        out = self.reg()
        self.emit(LOAD, out, slot)
        return out

    # -- body ---------------------------------------------------------------
    def _block(self, stmts) -> None:
        for s in stmts:
            self._stmt(s)

    def _subscript_regs(self, node: ast.Subscript) -> list[int]:
        regs = []
        for e in subscript_list(node):
            r = self.expr(e, count=False)
            regs.append(self.conv(r, self.typing.types[id(e)], INT))
        return regs

    def _elem_type(self, array: str) -> str:
        from .lang import ARRAY_TYPE

        return ARRAY_TYPE[self.arrays[array].elem_type]

    def _stmt(self, s) -> None:
        ty = self.typing
        red = reduction_pattern(s)
        if red is not None:
            target, kind, value = red
            op_t = ty.op_type[id(s)] if kind == "sum" else ty.op_type[id(s.value)]
            v = self.conv(self.expr(value), ty.types[id(value)], op_t)
            subs = self._subscript_regs(target)
            slot = self._slot(target.value.id, subs)
            self.emit(STORE, slot, v, RED_CODE[kind], TCODE[op_t], TCODE[self._elem_type(target.value.id)])
            return
        if isinstance(s, ast.Assign):
            tgt = s.targets[0]
            v = self.expr(s.value)
            vt = ty.types[id(s.value)]
            if isinstance(tgt, ast.Name):
                lt = ty.local_types[tgt.id]
                if tgt.id not in self.env:
                    self.env[tgt.id] = self.reg()
                    self.env_type[tgt.id] = lt
                v = self.conv(v, vt, lt)
                self.emit(MOV, self.env[tgt.id], v)
            else:
                et = self._elem_type(tgt.value.id)
                v = self.conv(v, vt, et)
                subs = self._subscript_regs(tgt)
                slot = self._slot(tgt.value.id, subs)
                self.emit(STORE, slot, v, 0, TCODE[et], TCODE[et])
        elif isinstance(s, ast.AugAssign):
            name = s.target.id
            v = self.expr(s.value)
            op_t = ty.op_type[id(s)]
            lt = self.env_type[name]
            x = self.conv(self.env[name], lt, op_t)
            y = self.conv(v, ty.types[id(s.value)], op_t)
            r = self.bin(ARITH[type(s.op)], x, y, op_t)
            self.emit(MOV, self.env[name], self.conv(r, op_t, lt))
        elif isinstance(s, ast.If):
            c = self._truth(s.test)
            brf = self.emit(BRF, c, 0, self.branch(0))
            self._block(s.body)
            if s.orelse:
                jmp = self.emit(JMP, 0)
                self.code[brf][2] = len(self.code)
                self._block(s.orelse)
                self.code[jmp][1] = len(self.code)
            else:
                self.code[brf][2] = len(self.code)
        elif isinstance(s, ast.For):
            args = [self.conv(self.expr(a), ty.types[id(a)], INT) for a in s.iter.args]
            if len(args) == 1:
                begin, end, step = self.const(0, INT), args[0], self.const(1, INT)
            elif len(args) == 2:
                begin, end, step = args[0], args[1], self.const(1, INT)
            else:
                begin, end, step = args
            var = s.target.id
            if var not in self.env:
                self.env[var] = self.reg()
                self.env_type[var] = INT
            row = [0] * LOOP_COLS
            row[L_VAR], row[L_BEGIN], row[L_END], row[L_STEP] = self.env[var], begin, end, step
            row[L_VW], row[L_THREADS], row[L_CHUNK] = 1, 1, 1
            row[L_BRANCH] = self.branch(1)
            lid = len(self.loops)
            self.loops.append(row)
            start = self.emit(FOR_INIT, lid)
            row[L_BODY] = start + 1
            self.break_stack.append([])
            self._block(s.body)
            self.emit(FOR_NEXT, lid)
            row[L_EXIT] = len(self.code)
            for j in self.break_stack.pop():
                self.code[j][1] = row[L_EXIT]
        elif isinstance(s, ast.Break):
            self.break_stack[-1].append(self.emit(JMP, 0))
        elif isinstance(s, ast.Pass):
            pass
        else:
            raise IRSemanticError(f"unsupported statement {ast.unparse(s)!r}")

    def _truth(self, n) -> int:
        r = self.expr(n)
        return self.conv(r, self.typing.types[id(n)], BOOL)

    def expr(self, n, count: bool = True) -> int:
        ty = self.typing
        t = ty.types[id(n)]
        if isinstance(n, ast.Constant):
            return self.const(n.value, concrete(t))
        if isinstance(n, ast.Name):
            if n.id in ("True", "False"):
                return self.const(n.id == "True", BOOL)
            return self.env[n.id]
        if isinstance(n, ast.Subscript):
            subs = self._subscript_regs(n)
            return self._load(n.value.id, subs)
        if isinstance(n, ast.BinOp):
            op_t = ty.op_type[id(n)]
            x = self._operand(n.left, op_t, count)
            y = self._operand(n.right, op_t, count)
            return self.bin(ARITH[type(n.op)], x, y, op_t, count)
        if isinstance(n, ast.UnaryOp):
            if isinstance(n.op, ast.UAdd):
                return self.expr(n.operand, count)
            if isinstance(n.op, ast.Not):
                x = self.conv(self.expr(n.operand, count), ty.types[id(n.operand)], BOOL)
                out = self.reg()
                self.emit(UN, out, x, 0, UN_NOT, TCODE[BOOL] | (0 if count else NOCOUNT))
                return out
            x = self._operand(n.operand, concrete(t), count)
            out = self.reg()
            self.emit(UN, out, x, 0, UN_NEG, TCODE[t] | (0 if count else NOCOUNT))
            return out
        if isinstance(n, ast.Compare):
            op_t = ty.op_type[id(n)]
            x = self._operand(n.left, op_t, count)
            y = self._operand(n.comparators[0], op_t, count)
            return self.bin(COMPARE[type(n.ops[0])], x, y, op_t, count)
        if isinstance(n, ast.BoolOp):
            sub = "and" if isinstance(n.op, ast.And) else "or"
            regs = [self.conv(self.expr(v, count), ty.types[id(v)], BOOL) for v in n.values]
            out = regs[0]
            for r in regs[1:]:
                out = self.bin(sub, out, r, BOOL, count)
            return out
        if isinstance(n, ast.IfExp):
            rt = concrete(t)
            out = self.reg()
            c = self._truth(n.test)
            brf = self.emit(BRF, c, 0, self.branch(0))
            self.emit(MOV, out, self._operand(n.body, rt, count))
            jmp = self.emit(JMP, 0)
            self.code[brf][2] = len(self.code)
            self.emit(MOV, out, self._operand(n.orelse, rt, count))
            self.code[jmp][1] = len(self.code)
            return out
        if isinstance(n, ast.Call):
            fn = n.func.id
            if fn in ("min", "max"):
                op_t = ty.op_type[id(n)]
                x = self._operand(n.args[0], op_t, count)
                y = self._operand(n.args[1], op_t, count)
                return self.bin(fn, x, y, op_t, count)
            a = n.args[0]
            at = ty.types[id(a)]
            if fn == "abs":
                x = self._operand(a, concrete(t), count)
                out = self.reg()
                self.emit(UN, out, x, 0, UN_ABS, TCODE[t] | (0 if count else NOCOUNT))
                return out
            if fn == "sqrt":
                x = self._operand(a, t, count)
                out = self.reg()
                self.emit(UN, out, x, 0, UN_SQRT, TCODE[t] | (0 if count else NOCOUNT))
                return out
            x = self.expr(a, count)
            out = self.reg()
            dst = INT if fn == "int" else F64
            if concrete(at) == dst:
                self.emit(MOV, out, x)
            else:
                self.emit(CAST, out, x, 0, TCODE[dst], 0 if count else NOCOUNT)
            return out
        raise IRSemanticError(f"unsupported expression {ast.unparse(n)!r}")

    def _operand(self, n, op_t: str, count: bool) -> int:
        t = self.typing.types[id(n)]
        if isinstance(n, ast.Constant) and not isinstance(n.value, bool):
            return self.const(n.value, concrete(op_t))
        return self.conv(self.expr(n, count), t, op_t)


def compile_nest(nest: LoopNest, outer_limit: int | None = None) -> Program:
    """Lower ``nest`` to bytecode; ``outer_limit`` truncates the outermost
    loop to that many iterations and runs it sequentially."""
    return _Compiler(nest, outer_limit).compile()
