"""Running nests on the simulated machine."""
from __future__ import annotations

import csv
import json
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ir.nest import DYNAMIC, LoopNest
from . import vm
from .compile import MAXR, Program, compile_nest
from .machine import C, COUNTERS, LINE_BYTES, PROFILE_COLUMNS, STATS, TARGETS, MachineConfig

CounterSet = namedtuple("CounterSet", COUNTERS)

NUMPY_DTYPE = {"f32": np.float32, "f64": np.float64, "i32": np.int32, "i64": np.int64, "bool": np.bool_}


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


@dataclass
class InputBindings:
    """Concrete arrays for a nest; arrays not listed start as zeros."""

    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def save(self, directory) -> None:
        """Write ``manifest.json`` plus one raw little-endian blob per array."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for name in sorted(self.arrays):
            a = np.ascontiguousarray(self.arrays[name])
            dt = a.dtype.newbyteorder("<")
            fname = f"{name}.bin"
            (d / fname).write_bytes(a.astype(dt, copy=False).tobytes())
            entries.append({"name": name, "dtype": dt.str, "shape": list(a.shape), "file": fname})
        (d / "manifest.json").write_text(json.dumps({"version": 1, "arrays": entries}, indent=1) + "\n")

    @classmethod
    def load(cls, directory) -> "InputBindings":
        d = Path(directory)
        meta = json.loads((d / "manifest.json").read_text())
        arrays = {}
        for e in meta["arrays"]:
            raw = (d / e["file"]).read_bytes()
            a = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
            arrays[e["name"]] = a.astype(a.dtype.newbyteorder("="))
        return cls(arrays)

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.arrays):
            a = np.ascontiguousarray(self.arrays[name])
            h.update(name.encode())
            h.update(a.dtype.str.encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()


@dataclass
class Layout:
    """Placement of every array in the flat heap and the byte address space."""

    arrtab: np.ndarray
    heap_size: int
    total_lines: int
    shapes: dict
    strides: dict
    heap_off: dict


def _shape_of(nest: LoopNest, inputs: InputBindings) -> dict:
    shapes = {}
    for a in nest.arrays:
        given = inputs.arrays.get(a.name)
        if a.is_dynamic:
            if given is None:
                raise SimulationError(f"unbound dynamic extent: array {a.name!r} has a dynamic shape but no input")
            if given.ndim != a.ndim:
                raise SimulationError(f"input {a.name!r} has rank {given.ndim}, expected {a.ndim}")
            for s, g in zip(a.shape, given.shape):
                if s != DYNAMIC and s != g:
                    raise SimulationError(f"input {a.name!r} has shape {given.shape}, expected {a.shape}")
            shapes[a.name] = tuple(given.shape)
        else:
            if given is not None and tuple(given.shape) != tuple(a.shape):
                raise SimulationError(f"input {a.name!r} has shape {given.shape}, expected {a.shape}")
            shapes[a.name] = tuple(a.shape)
    return shapes


def _row_major(shape) -> tuple:
    out, acc = [], 1
    for s in reversed(shape):
        out.append(acc)
        acc *= s
    return tuple(reversed(out))


def make_layout(nest: LoopNest, inputs: InputBindings) -> Layout:
    shapes = _shape_of(nest, inputs)
    tab = np.zeros((len(nest.arrays), vm.ARR_COLS), dtype=np.int64)
    heap_cursor = 0
    byte_cursor = 0
    strides, heap_off = {}, {}
    for i, a in enumerate(nest.arrays):
        shape = shapes[a.name]
        st = a.strides if not a.is_dynamic else _row_major(shape)
        if a.ndim > MAXR:
            raise SimulationError(f"array {a.name} exceeds rank {MAXR}")
        size = 1 + sum((s - 1) * abs(k) for s, k in zip(shape, st))
        if any(k < 0 for k in st):
            raise SimulationError(f"negative strides are not supported ({a.name})")
        align = max(a.alignment, 1)
        byte_cursor = -(-byte_cursor // align) * align
        base = byte_cursor + a.offset * a.bytes_per_element
        tab[i, vm.A_HEAP] = heap_cursor
        tab[i, vm.A_BYTE] = base
        tab[i, vm.A_BPE] = a.bytes_per_element
        tab[i, vm.A_REG] = 1 if a.storage == "register" else 0
        tab[i, vm.A_NDIM] = a.ndim
        for k in range(a.ndim):
            tab[i, vm.A_SHAPE + k] = shape[k]
            tab[i, vm.A_STRIDE + k] = st[k]
        strides[a.name] = st
        heap_off[a.name] = heap_cursor
        heap_cursor += size
        byte_cursor = base + size * a.bytes_per_element
    total_lines = byte_cursor // LINE_BYTES + 1
    return Layout(tab, heap_cursor, total_lines, shapes, strides, heap_off)


def _linear_index(shape, strides) -> np.ndarray:
    lin = np.zeros(shape, dtype=np.int64)
    for k, (s, st) in enumerate(zip(shape, strides)):
        idx = np.arange(s, dtype=np.int64).reshape([-1 if j == k else 1 for j in range(len(shape))])
        lin = lin + idx * st
    return lin


def fill_heap(nest: LoopNest, inputs: InputBindings, layout: Layout) -> np.ndarray:
    heap = np.zeros(layout.heap_size, dtype=np.float64)
    for a in nest.arrays:
        given = inputs.arrays.get(a.name)
        if given is None:
            continue
        lin = _linear_index(layout.shapes[a.name], layout.strides[a.name])
        vals = np.asarray(given)
        if a.elem_type == "f32":
            vals = vals.astype(np.float32)
        heap[layout.heap_off[a.name] + lin] = vals.astype(np.float64)
    return heap


def read_heap(nest: LoopNest, heap: np.ndarray, layout: Layout) -> dict:
    out = {}
    for a in nest.arrays:
        lin = _linear_index(layout.shapes[a.name], layout.strides[a.name])
        vals = heap[layout.heap_off[a.name] + lin]
        out[a.name] = vals.astype(NUMPY_DTYPE[a.elem_type])
    return out


# ---------------------------------------------------------------------------
# machine state
# ---------------------------------------------------------------------------


class SimState:
    """Cache contents and branch-predictor state; reusable across runs."""

    def __init__(self, machine: MachineConfig, total_lines: int, nbranch: int):
        T = machine.threads
        nc = 2 * T + 1
        self.machine = machine
        self.total_lines = total_lines
        self.st = np.zeros((nc, total_lines), dtype=np.int8)
        self.prev = np.full((nc, total_lines), -1, dtype=np.int32)
        self.nxt = np.full((nc, total_lines), -1, dtype=np.int32)
        self.head = np.full(nc, -1, dtype=np.int64)
        self.tail = np.full(nc, -1, dtype=np.int64)
        self.cnt = np.zeros(nc, dtype=np.int64)
        self.cap = np.array([machine.l1.lines] * T + [machine.l2.lines] * T + [machine.l3.lines], dtype=np.int64)
        self.pred = None
        self.nbranch = nbranch

    def predictor(self, init: np.ndarray) -> np.ndarray:
        if self.pred is None or self.pred.shape[1] != len(init):
            self.pred = np.tile(init, (self.machine.threads, 1)).astype(np.int8)
        return self.pred

    def resident_lines(self, level: int, thread: int = 0) -> int:
        T = self.machine.threads
        c = {1: thread, 2: T + thread, 3: 2 * T}[level]
        return int(self.cnt[c])


@dataclass
class SimResult:
    counters: np.ndarray        # (threads, 19) int64
    thread_cycles: np.ndarray   # (threads,) int64
    outputs: dict
    unique_lines: int
    machine: MachineConfig

    @property
    def per_thread(self) -> list:
        return [CounterSet(*map(int, row)) for row in self.counters]

    @property
    def runtime_cycles(self) -> int:
        return int(self.thread_cycles.max())

    @property
    def unique_bytes(self) -> int:
        return self.unique_lines * LINE_BYTES

    @property
    def trace_stats(self) -> dict:
        return {"unique_lines": self.unique_lines, "unique_bytes": self.unique_bytes}

    def total(self, name: str) -> int:
        return int(self.counters[:, C[name]].sum())

    @property
    def l1_miss_ratio(self) -> float:
        acc = self.total("loads") + self.total("stores")
        return self.total("l1d_replacement") / acc if acc else 0.0


_program_cache: dict = {}


def program_for(nest: LoopNest, outer_limit: int | None = None) -> Program:
    key = (nest, outer_limit)
    prog = _program_cache.get(key)
    if prog is None:
        if len(_program_cache) > 256:
            _program_cache.clear()
        prog = compile_nest(nest, outer_limit)
        _program_cache[key] = prog
    return prog


def simulate(nest: LoopNest, inputs: InputBindings, machine: MachineConfig | None = None,
             state: SimState | None = None, outer_limit: int | None = None) -> SimResult:
    """Execute ``nest`` on ``machine``. Passing the same ``state`` to several
    calls keeps caches and predictors warm between them."""
    machine = machine or MachineConfig()
    prog = program_for(nest, outer_limit)
    layout = make_layout(nest, inputs)
    heap = fill_heap(nest, inputs, layout)
    if state is None:
        state = SimState(machine, layout.total_lines, len(prog.branch_init))
    elif state.total_lines != layout.total_lines or state.machine != machine:
        raise SimulationError("simulation state does not match this nest's layout or machine")
    T = machine.threads
    regs = prog.regs.copy()
    ctr = np.zeros((T, len(COUNTERS)), dtype=np.int64)
    clock = np.zeros(T, dtype=np.int64)
    touched = np.zeros(layout.total_lines, dtype=np.uint8)
    lastaddr = np.full((T, max(len(prog.slots), 1)), -(1 << 40), dtype=np.int64)
    mp = np.array([machine.l1_latency, machine.l2_latency, machine.l3_latency, machine.memory_latency,
                   machine.op_cost, machine.mispredict_penalty, machine.dispatch_overhead,
                   machine.fork_join_overhead], dtype=np.int64)
    err = np.zeros(8, dtype=np.int64)
    pred = state.predictor(prog.branch_init)
    code = vm.run(prog.code, prog.loops, prog.slots, layout.arrtab, heap, regs, T,
                  state.st, state.prev, state.nxt, state.head, state.tail, state.cnt, state.cap,
                  pred, ctr, clock, touched, lastaddr, mp, err)
    if code != vm.OK:
        raise SimulationError(_describe_error(code, err, prog, regs, nest))
    return SimResult(ctr, clock, read_heap(nest, heap, layout), int(touched.sum()), machine)


def _describe_error(code, err, prog: Program, regs, nest: LoopNest) -> str:
    iteration = {p: int(regs[r]) for p, r in prog.param_regs.items() if p in nest.params}
    if code == vm.E_BOUNDS:
        slot = int(err[2])
        array = prog.slot_array[slot]
        return (f"out-of-bounds access to array {array!r}: index {int(err[4])} in dimension {int(err[3])}"
                f" at iteration {iteration}")
    if code == vm.E_ZERODIV:
        return f"integer division by zero at iteration {iteration}"
    if code == vm.E_STEP:
        return "loop step evaluated to zero"
    return f"simulator fault {code} at pc {int(err[1])}"


# ---------------------------------------------------------------------------
# profiles and targets
# ---------------------------------------------------------------------------


def aggregate_profile(result: SimResult) -> np.ndarray:
    """95 features: for each counter (in ``COUNTERS`` order) the min, max,
    mean, population std and sum over threads."""
    x = result.counters.astype(np.float64)
    if x.shape[0] < 1:
        raise ValueError("profile needs at least one thread")
    stats = np.stack([x.min(0), x.max(0), x.mean(0), x.std(0), x.sum(0)], axis=1)
    return stats.reshape(-1)


FLOPS_PER_OP = {"fp32_scalar": 1, "fp32_p128": 4, "fp32_p256": 8, "fp32_p512": 16,
                 "fp64_scalar": 1, "fp64_p128": 2, "fp64_p256": 4, "fp64_p512": 8}


def compute_targets(result: SimResult, machine: MachineConfig | None = None) -> np.ndarray:
    """The 20 target metrics in ``TARGETS`` order."""
    tot = {name: float(result.counters[:, i].sum()) for i, name in enumerate(COUNTERS)}
    instr = tot["instructions"]
    if instr <= 0:
        raise ValueError("empty execution")
    cycles = float(result.runtime_cycles)
    line = float(LINE_BYTES)

    def ratio(a, b):
        return a / b if b > 0 else 0.0

    fp32_packed = tot["fp32_p128"] + tot["fp32_p256"] + tot["fp32_p512"]
    fp64_packed = tot["fp64_p128"] + tot["fp64_p256"] + tot["fp64_p512"]
    fp_all = tot["fp32_scalar"] + tot["fp64_scalar"] + fp32_packed + fp64_packed
    flops = sum(tot[k] * w for k, w in FLOPS_PER_OP.items())
    mem_bytes = line * (tot["mem_read_lines"] + tot["mem_write_lines"])
    values = {
        "runtime_cycles": cycles,
        "ipc": instr / cycles,
        "mem_read_bw": line * tot["mem_read_lines"] / cycles,
        "mem_write_bw": line * tot["mem_write_lines"] / cycles,
        "l3_load_bw": line * tot["l3_lines_in"] / cycles,
        "l3_evict_bw": line * tot["l3_writeback_lines"] / cycles,
        "l2_load_bw": line * tot["l1d_replacement"] / cycles,
        "l2_evict_bw": line * tot["l1d_evict"] / cycles,
        "l2_miss_ratio": ratio(tot["l3_lines_in"], tot["l1d_replacement"]),
        "l3_miss_ratio": ratio(tot["mem_read_lines"], tot["l3_lines_in"]),
        "branch_rate": tot["branches"] / instr,
        "mispredict_ratio": ratio(tot["branch_mispredicts"], tot["branches"]),
        "fp32_scalar_rate": tot["fp32_scalar"] / instr,
        "fp32_packed_rate": fp32_packed / instr,
        "fp64_scalar_rate": tot["fp64_scalar"] / instr,
        "fp64_packed_rate": fp64_packed / instr,
        "load_rate": tot["loads"] / instr,
        "store_rate": tot["stores"] / instr,
        "vectorization_ratio": ratio(fp32_packed + fp64_packed, fp_all),
        # bytes floor of one line keeps cache-resident nests finite
        "arithmetic_intensity": flops / max(mem_bytes, line),
    }
    return np.array([values[k] for k in TARGETS], dtype=np.float64)


def measure(nest: LoopNest, inputs: InputBindings, machine: MachineConfig | None = None):
    """One warmup pass, then one measured pass on the warmed caches.

    Returns ``(profile, targets)`` of the measured pass.
    """
    profile, targets, _ = measure_full(nest, inputs, machine)
    return profile, targets


def measure_full(nest: LoopNest, inputs: InputBindings, machine: MachineConfig | None = None):
    machine = machine or MachineConfig()
    layout = make_layout(nest, inputs)
    prog = program_for(nest)
    state = SimState(machine, layout.total_lines, len(prog.branch_init))
    simulate(nest, inputs, machine, state)
    result = simulate(nest, inputs, machine, state)
    return aggregate_profile(result), compute_targets(result, machine), result


def export_csv(path, rows: list, columns=PROFILE_COLUMNS, id_column: str = "id") -> None:
    """Write ``(id, vector)`` rows with the documented column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([id_column, *columns])
        for rid, vec in rows:
            w.writerow([rid, *(repr(float(v)) for v in vec)])


__all__ = [
    "CounterSet", "InputBindings", "SimResult", "SimState", "SimulationError", "aggregate_profile",
    "compute_targets", "export_csv", "measure", "measure_full", "simulate", "STATS", "TARGETS",
    "PROFILE_COLUMNS",
]

