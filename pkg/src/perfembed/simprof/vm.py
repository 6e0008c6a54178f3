"""Bytecode interpreter with the cache hierarchy, branch predictor and
thread scheduler, compiled with numba.

Cache state is indexed by line number. Caches ``0..T-1`` are the private
L1s, ``T..2T-1`` the private L2s and ``2T`` the shared L3; each is an LRU
list threaded through ``prev``/``nxt``. ``st`` holds 0 (absent), 1 (clean)
or 2 (dirty). The hierarchy is inclusive: an eviction invalidates the line
in every level above.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .compile import (
    BIN, BRF, CAST, FOR_INIT, FOR_NEXT, HALT, JMP, L_ASSIGN, L_BEGIN, L_BODY, L_BRANCH, L_CHUNK,
    L_END, L_EXIT, L_KIND, L_STEP, L_THREADS, L_VAR, L_VW, LOAD, MOV, NOCOUNT, PAR_BEGIN, PAR_NEXT,
    STORE, UN,
)
from .machine import C

# counter indices
I_INSTR = C["instructions"]
I_FP32 = C["fp32_scalar"]
I_FP64 = C["fp64_scalar"]
I_BR = C["branches"]
I_MISP = C["branch_mispredicts"]
I_LD = C["loads"]
I_ST = C["stores"]
I_MEMRD = C["mem_read_lines"]
I_MEMWR = C["mem_write_lines"]
I_L3IN = C["l3_lines_in"]
I_L3WB = C["l3_writeback_lines"]
I_L1R = C["l1d_replacement"]
I_L1E = C["l1d_evict"]

# machine parameter vector
P_L1, P_L2, P_L3, P_MEM, P_OP, P_MISP, P_DISPATCH, P_FORK = range(8)

# array table columns
A_HEAP, A_BYTE, A_BPE, A_REG, A_NDIM, A_SHAPE = 0, 1, 2, 3, 4, 5
A_STRIDE = A_SHAPE + 8
ARR_COLS = A_STRIDE + 8

# error codes
OK, E_BOUNDS, E_ZERODIV, E_STEP = 0, 1, 2, 3


@njit(cache=True)
def _remove(c, line, prev, nxt, head, tail, cnt):
    p = prev[c, line]
    n = nxt[c, line]
    if p >= 0:
        nxt[c, p] = n
    else:
        head[c] = n
    if n >= 0:
        prev[c, n] = p
    else:
        tail[c] = p
    cnt[c] -= 1


@njit(cache=True)
def _push(c, line, prev, nxt, head, tail, cnt):
    prev[c, line] = -1
    h = head[c]
    nxt[c, line] = h
    if h >= 0:
        prev[c, h] = line
    else:
        tail[c] = line
    head[c] = line
    cnt[c] += 1


@njit(cache=True)
def cache_access(tid, line, write, T, st, prev, nxt, head, tail, cnt, cap, ctr):
    """Access one line from thread ``tid``; returns the level that hit (1-4)."""
    c1 = tid
    c2 = T + tid
    c3 = 2 * T
    if st[c1, line] != 0:
        if head[c1] != line:
            _remove(c1, line, prev, nxt, head, tail, cnt)
            _push(c1, line, prev, nxt, head, tail, cnt)
        if write:
            st[c1, line] = 2
        return 1
    ctr[tid, I_L1R] += 1
    level = 2
    if st[c2, line] != 0:
        _remove(c2, line, prev, nxt, head, tail, cnt)
        _push(c2, line, prev, nxt, head, tail, cnt)
    else:
        ctr[tid, I_L3IN] += 1
        level = 3
        if st[c3, line] != 0:
            _remove(c3, line, prev, nxt, head, tail, cnt)
            _push(c3, line, prev, nxt, head, tail, cnt)
        else:
            level = 4
            ctr[tid, I_MEMRD] += 1
            _push(c3, line, prev, nxt, head, tail, cnt)
            st[c3, line] = 1
            if cnt[c3] > cap[c3]:
                v = tail[c3]
                dirty = st[c3, v] == 2
                for t in range(T):
                    for cc in (t, T + t):
                        if st[cc, v] != 0:
                            if st[cc, v] == 2:
                                dirty = True
                            _remove(cc, v, prev, nxt, head, tail, cnt)
                            st[cc, v] = 0
                _remove(c3, v, prev, nxt, head, tail, cnt)
                st[c3, v] = 0
                if dirty:
                    ctr[tid, I_MEMWR] += 1
        _push(c2, line, prev, nxt, head, tail, cnt)
        st[c2, line] = 1
        if cnt[c2] > cap[c2]:
            v = tail[c2]
            dirty = st[c2, v] == 2
            if st[c1, v] != 0:
                if st[c1, v] == 2:
                    dirty = True
                _remove(c1, v, prev, nxt, head, tail, cnt)
                st[c1, v] = 0
            _remove(c2, v, prev, nxt, head, tail, cnt)
            st[c2, v] = 0
            if dirty:
                ctr[tid, I_L3WB] += 1
                st[c3, v] = 2
    _push(c1, line, prev, nxt, head, tail, cnt)
    st[c1, line] = 2 if write else 1
    if cnt[c1] > cap[c1]:
        v = tail[c1]
        if st[c1, v] == 2:
            ctr[tid, I_L1E] += 1
            st[c2, v] = 2
        _remove(c1, v, prev, nxt, head, tail, cnt)
        st[c1, v] = 0
    return level


@njit(cache=True)
def _round(x, tcode):
    if tcode == 1:
        return np.float64(np.float32(x))
    return x


@njit(cache=True)
def _convert(x, tcode):
    """Convert a value to type ``tcode`` (0 int, 1 f32, 2 f64, 3 bool)."""
    if tcode == 0:
        return np.float64(np.trunc(x))
    if tcode == 1:
        return np.float64(np.float32(x))
    if tcode == 3:
        return 1.0 if x != 0.0 else 0.0
    return x


@njit(cache=True)
def _fp_count(ctr, tid, tcode, vw):
    # tcode 1 -> fp32, 2 -> fp64; packed counters by vector bits
    if tcode != 1 and tcode != 2:
        return
    base = I_FP32 if tcode == 1 else I_FP64
    if vw <= 1:
        ctr[tid, base] += 1
        return
    bits = vw * (32 if tcode == 1 else 64)
    if bits <= 128:
        ctr[tid, base + 1] += 1
    elif bits <= 256:
        ctr[tid, base + 2] += 1
    else:
        ctr[tid, base + 3] += 1


@njit(cache=True)
def _trip(begin, end, step):
    if step > 0:
        if end <= begin:
            return 0
        return (end - begin + step - 1) // step
    if end >= begin:
        return 0
    return (begin - end - step - 1) // (-step)


@njit(cache=True, error_model="numpy")
def run(code, loops, slots, arrtab, heap, regs, T, st, prev, nxt, head, tail, cnt, cap,
        pred, ctr, clock, touched, lastaddr, mp, err):
    """Execute a program; returns an error code (0 on success)."""
    nloops = loops.shape[0]
    loop_begin = np.zeros(max(nloops, 1), dtype=np.int64)
    # parallel region state
    p_lo = np.zeros(T, dtype=np.int64)
    p_hi = np.zeros(T, dtype=np.int64)
    p_loop = -1
    p_n = 0
    p_nthr = 1
    p_rr = 0
    p_next = 0
    p_dyn = False
    p_chunk = 1
    tid = 0
    lane = 0
    vw = 1
    op_cost = mp[P_OP]
    pc = 0
    while True:
        op = code[pc, 0]
        a = code[pc, 1]
        b = code[pc, 2]
        c = code[pc, 3]
        d = code[pc, 4]
        e = code[pc, 5]
        if op == BIN:
            x = regs[b]
            y = regs[c]
            tc = e & 3
            r = 0.0
            if d == 0:
                r = x + y
            elif d == 1:
                r = x - y
            elif d == 2:
                r = x * y
            elif d == 3:
                r = x / y
            elif d == 4 or d == 5:
                xi = np.int64(x)
                yi = np.int64(y)
                if yi == 0:
                    err[0] = E_ZERODIV
                    err[1] = pc
                    return E_ZERODIV
                q = xi // yi  # floor division, as in Python
                if d == 4:
                    r = np.float64(q)
                else:
                    r = np.float64(xi - q * yi)
            elif d == 6:
                r = y if y < x else x
            elif d == 7:
                r = y if y > x else x
            elif d == 8:
                r = 1.0 if x < y else 0.0
            elif d == 9:
                r = 1.0 if x <= y else 0.0
            elif d == 10:
                r = 1.0 if x > y else 0.0
            elif d == 11:
                r = 1.0 if x >= y else 0.0
            elif d == 12:
                r = 1.0 if x == y else 0.0
            elif d == 13:
                r = 1.0 if x != y else 0.0
            elif d == 14:
                r = 1.0 if (x != 0.0 and y != 0.0) else 0.0
            else:
                r = 1.0 if (x != 0.0 or y != 0.0) else 0.0
            if d <= 7:
                r = _round(r, tc)
            regs[a] = r
            if (e & NOCOUNT) == 0 and lane == 0:
                ctr[tid, I_INSTR] += 1
                clock[tid] += op_cost
                if d <= 7 and d != 4 and d != 5:
                    _fp_count(ctr, tid, tc, vw)
            pc += 1
        elif op == MOV:
            regs[a] = regs[b]
            pc += 1
        elif op == LOAD or op == STORE:
            slot = a if op == STORE else b
            arr = slots[slot, 0]
            nd = slots[slot, 1]
            lin = 0
            for k in range(nd):
                v = np.int64(regs[slots[slot, 2 + k]])
                if v < 0 or v >= arrtab[arr, A_SHAPE + k]:
                    err[0] = E_BOUNDS
                    err[1] = pc
                    err[2] = slot
                    err[3] = k
                    err[4] = v
                    return E_BOUNDS
                lin += v * arrtab[arr, A_STRIDE + k]
            hidx = arrtab[arr, A_HEAP] + lin
            in_reg = arrtab[arr, A_REG] != 0
            red = c if op == STORE else 0
            if op == LOAD:
                regs[a] = heap[hidx]
            else:
                val = regs[b]
                if red == 0:
                    heap[hidx] = _convert(val, e)
                else:
                    old = heap[hidx]
                    if d == 1:
                        old = np.float64(np.float32(old))
                    if red == 1:
                        r = _round(old + val, d)
                    elif red == 2:
                        r = val if val < old else old
                    else:
                        r = val if val > old else old
                    heap[hidx] = _convert(r, e)
            if in_reg:
                if red != 0 and lane == 0:
                    ctr[tid, I_INSTR] += 1
                    clock[tid] += op_cost
                    _fp_count(ctr, tid, d, vw)
            else:
                addr = arrtab[arr, A_BYTE] + lin * arrtab[arr, A_BPE]
                line = addr >> 6
                touched[line] = 1
                coalesced = False
                if vw > 1:
                    if lane > 0:
                        la = lastaddr[tid, slot]
                        coalesced = addr == la or addr == la + arrtab[arr, A_BPE]
                    lastaddr[tid, slot] = addr
                level = cache_access(tid, line, op == STORE, T, st, prev, nxt, head, tail, cnt, cap, ctr)
                if not coalesced:
                    if op == LOAD:
                        ctr[tid, I_LD] += 1
                        ctr[tid, I_INSTR] += 1
                        clock[tid] += op_cost
                    elif red == 0:
                        ctr[tid, I_ST] += 1
                        ctr[tid, I_INSTR] += 1
                        clock[tid] += op_cost
                    else:
                        ctr[tid, I_LD] += 1
                        ctr[tid, I_ST] += 1
                        ctr[tid, I_INSTR] += 3
                        clock[tid] += 3 * op_cost
                        _fp_count(ctr, tid, d, vw if lane == 0 else 1)
                    clock[tid] += mp[level - 1]
                elif level > 1:
                    clock[tid] += mp[level - 1]
            pc += 1
        elif op == CAST:
            regs[a] = _convert(regs[b], d)
            if (e & NOCOUNT) == 0 and lane == 0:
                ctr[tid, I_INSTR] += 1
                clock[tid] += op_cost
            pc += 1
        elif op == UN:
            x = regs[b]
            tc = e & 3
            if d == 0:
                r = -x
            elif d == 1:
                r = 1.0 if x == 0.0 else 0.0
            elif d == 2:
                r = abs(x)
            else:
                r = _round(np.sqrt(x) if x >= 0.0 else np.nan, tc)
            regs[a] = r
            if (e & NOCOUNT) == 0 and lane == 0:
                ctr[tid, I_INSTR] += 1
                clock[tid] += op_cost
                if d == 3:
                    _fp_count(ctr, tid, tc, vw)
            pc += 1
        elif op == BRF:
            taken = regs[a] == 0.0
            ctr[tid, I_INSTR] += 1
            ctr[tid, I_BR] += 1
            clock[tid] += op_cost
            t8 = np.int8(1 if taken else 0)
            if pred[tid, c] != t8:
                ctr[tid, I_MISP] += 1
                clock[tid] += mp[P_MISP]
                pred[tid, c] = t8
            pc = b if taken else pc + 1
        elif op == JMP:
            ctr[tid, I_INSTR] += 1
            ctr[tid, I_BR] += 1
            clock[tid] += op_cost
            pc = a
        elif op == FOR_INIT:
            step = np.int64(regs[loops[a, L_STEP]])
            if step == 0:
                err[0] = E_STEP
                err[1] = pc
                return E_STEP
            begin = np.int64(regs[loops[a, L_BEGIN]])
            end = np.int64(regs[loops[a, L_END]])
            loop_begin[a] = begin
            regs[loops[a, L_VAR]] = np.float64(begin)
            ctr[tid, I_INSTR] += 1
            clock[tid] += op_cost
            w = loops[a, L_VW]
            if w > 1:
                vw = w
                lane = 0
            if _trip(begin, end, step) == 0:
                vw = 1
                pc = loops[a, L_EXIT]
            else:
                pc += 1
        elif op == FOR_NEXT:
            step = np.int64(regs[loops[a, L_STEP]])
            end = np.int64(regs[loops[a, L_END]])
            v = np.int64(regs[loops[a, L_VAR]]) + step
            regs[loops[a, L_VAR]] = np.float64(v)
            taken = v < end if step > 0 else v > end
            w = loops[a, L_VW]
            counted = True
            if w > 1:
                t_idx = (v - loop_begin[a]) // step
                lane = t_idx % w if taken else 0
                counted = lane == 0
            if counted:
                ctr[tid, I_INSTR] += 2
                ctr[tid, I_BR] += 1
                clock[tid] += 2 * op_cost
                bid = loops[a, L_BRANCH]
                t8 = np.int8(1 if taken else 0)
                if pred[tid, bid] != t8:
                    ctr[tid, I_MISP] += 1
                    clock[tid] += mp[P_MISP]
                    pred[tid, bid] = t8
            if taken:
                pc = loops[a, L_BODY]
            else:
                if w > 1:
                    vw = 1
                    lane = 0
                pc += 1
        elif op == PAR_BEGIN or op == PAR_NEXT:
            if op == PAR_BEGIN:
                step = np.int64(regs[loops[a, L_STEP]])
                if step == 0:
                    err[0] = E_STEP
                    err[1] = pc
                    return E_STEP
                begin = np.int64(regs[loops[a, L_BEGIN]])
                end = np.int64(regs[loops[a, L_END]])
                loop_begin[a] = begin
                p_loop = a
                p_n = _trip(begin, end, step)
                p_nthr = min(loops[a, L_THREADS], T)
                p_dyn = loops[a, L_ASSIGN] == 1
                p_chunk = loops[a, L_CHUNK]
                ctr[tid, I_INSTR] += 1
                clock[tid] += op_cost + mp[P_FORK]
                for t in range(1, p_nthr):
                    if clock[t] < clock[0]:
                        clock[t] = clock[0]
                if p_dyn:
                    p_next = 0
                    for t in range(p_nthr):
                        p_lo[t] = 0
                        p_hi[t] = 0
                else:
                    base = p_n // p_nthr
                    extra = p_n % p_nthr
                    s = 0
                    for t in range(p_nthr):
                        cntt = base + (1 if t < extra else 0)
                        p_lo[t] = s
                        p_hi[t] = s + cntt
                        s += cntt
                    p_rr = 0
            else:
                # end of one iteration of thread tid: loop bookkeeping
                more = p_lo[tid] < p_hi[tid]
                ctr[tid, I_INSTR] += 2
                ctr[tid, I_BR] += 1
                clock[tid] += 2 * op_cost
                bid = loops[a, L_BRANCH]
                t8 = np.int8(1 if more else 0)
                if pred[tid, bid] != t8:
                    ctr[tid, I_MISP] += 1
                    clock[tid] += mp[P_MISP]
                    pred[tid, bid] = t8
            # pick the next (thread, iteration)
            nt = -1
            it = 0
            if p_dyn:
                if op == PAR_NEXT and p_lo[tid] < p_hi[tid]:
                    nt = tid
                elif p_next < p_n:
                    best = 0
                    for t in range(1, p_nthr):
                        if clock[t] < clock[best]:
                            best = t
                    nt = best
                    p_lo[nt] = p_next
                    p_hi[nt] = min(p_n, p_next + p_chunk)
                    p_next = p_hi[nt]
                    clock[nt] += mp[P_DISPATCH]
                if nt >= 0:
                    it = p_lo[nt]
                    p_lo[nt] += 1
            else:
                for k in range(p_nthr):
                    t = (p_rr + k) % p_nthr
                    if p_lo[t] < p_hi[t]:
                        nt = t
                        break
                if nt >= 0:
                    it = p_lo[nt]
                    p_lo[nt] += 1
                    p_rr = (nt + 1) % p_nthr
            if nt >= 0:
                tid = nt
                step = np.int64(regs[loops[a, L_STEP]])
                regs[loops[a, L_VAR]] = np.float64(loop_begin[a] + it * step)
                pc = loops[a, L_BODY]
            else:
                # join
                m = clock[0]
                for t in range(1, p_nthr):
                    if clock[t] > m:
                        m = clock[t]
                clock[0] = m
                tid = 0
                p_loop = -1
                pc = loops[a, L_EXIT]
        elif op == HALT:
            return OK
        else:
            err[0] = 99
            err[1] = pc
            return 99
