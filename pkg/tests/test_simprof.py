import math

import numpy as np
import pytest

from conftest import copy_nest
from perfembed.corpus import KINDS, KernelSpec, generate_kernel
from perfembed.corpus.kernels import VARIANTS
from perfembed.ir import DataArray, ScheduleAnnotation, build_nest, canonical_schedule, make_map
from perfembed.simprof import (COUNTERS, PROFILE_COLUMNS, TARGETS, CacheLevel, InputBindings, MachineConfig,
                               SimResult, SimState, SimulationError, aggregate_profile, compute_targets,
                               export_csv, measure, measure_full, simulate)
from perfembed.simprof.machine import C
from perfembed.simprof.reference import reference_run
from perfembed.simprof.simulate import make_layout, program_for

ONE = MachineConfig(threads=1)
SMALL = MachineConfig(threads=1, l1=CacheLevel(1024), l2=CacheLevel(4096), l3=CacheLevel(16384))

# small instance of every kernel variant, used by the oracle comparisons
SMALL_SIZES = {
    "map": dict(N=300, M=20), "reduction": dict(N=40, M=30), "stencil": dict(N=30, M=20),
    "matmul": dict(M=12, N=10, K=9), "minplus_matmul": dict(M=12, N=10, K=9),
    "boolean_mask": dict(N=200, M=8), "csr_spmm": dict(rows=30, cols=20, nnz=120, K=6, powerlaw=15),
    "csr_spmv": dict(rows=40, cols=30, nnz=200, powerlaw=12), "prime_filter": dict(n=200),
    "blur": dict(N=20, M=24), "histogram": dict(N=300, bins=16, M=10),
}
CASES = [(k, v, dt) for k in KINDS for v in range(VARIANTS[k]) for dt in ("f32", "f64")]


def _result(counters, cycles, machine=ONE):
    counters = np.asarray(counters, dtype=np.int64)
    return SimResult(counters, np.asarray(cycles, dtype=np.int64), {}, 0, machine)


def _scan(n, dtype="f64"):
    arrays = [DataArray("A", dtype, (n,)), DataArray("s", dtype, (1,))]
    return build_nest("scan", arrays, [make_map("m0", "i", 0, n)], "s[0] += A[i]")


# -- oracles --------------------------------------------------------------------


@pytest.mark.parametrize("kind,variant,dtype", CASES)
def test_matches_reference_interpreter(kind, variant, dtype):
    nest, inputs = generate_kernel(KernelSpec(kind, dict(SMALL_SIZES[kind], variant=variant), 3, dtype))
    res = simulate(nest, inputs)
    out, instructions = reference_run(nest, inputs)
    for name, arr in out.items():
        assert arr.dtype == res.outputs[name].dtype
        assert np.array_equal(arr, res.outputs[name]), name
    # conservation: instruction totals agree with the statement-weight count
    assert res.total("instructions") == instructions


@pytest.mark.parametrize("kind", KINDS)
def test_schedule_invariance_and_inclusion(kind):
    spec = KernelSpec(kind, dict(SMALL_SIZES[kind]), 5, "f64")
    nest, inputs = generate_kernel(spec)
    static = simulate(nest, inputs)
    dyn = simulate(nest.with_schedule("m0", ScheduleAnnotation(True, "dynamic", 3, 4, 1)), inputs)
    assert static.total("instructions") == dyn.total("instructions")
    for name in static.outputs:
        assert np.array_equal(static.outputs[name], dyn.outputs[name])
    for r in (static, dyn):
        assert r.total("l1d_replacement") >= r.total("l3_lines_in") >= r.total("mem_read_lines")
        assert (r.counters >= 0).all()
        assert (r.counters[:, C["branch_mispredicts"]] <= r.counters[:, C["branches"]]).all()


@pytest.mark.parametrize("n,dtype", [(1024, "f64"), (1000, "f32"), (77, "f64"), (4099, "f32")])
def test_streaming_bound(n, dtype):
    res = simulate(_scan(n, dtype), InputBindings({}), ONE)
    nbytes = n * (8 if dtype == "f64" else 4)
    # the accumulator line is the extra miss
    assert res.total("mem_read_lines") == math.ceil(nbytes / 64) + 1


def test_cold_scan_1024():
    arrays = [DataArray("A", "f64", (1024,)), DataArray("s", "f64", (1,), storage="register")]
    nest = build_nest("scan", arrays, [make_map("m0", "i", 0, 1024)], "s[0] += A[i]")
    res = simulate(nest, InputBindings({"A": np.ones(1024)}), ONE)
    assert res.total("mem_read_lines") == 128
    assert res.l1_miss_ratio == pytest.approx(1 / 8)
    assert res.outputs["s"][0] == 1024.0


def test_warm_cache_second_pass():
    nest = _scan(1024)
    state = SimState(ONE, make_layout(nest, InputBindings({})).total_lines, 0)
    first = simulate(nest, InputBindings({}), ONE, state)
    second = simulate(nest, InputBindings({}), ONE, state)
    assert first.total("mem_read_lines") > 0
    assert second.total("mem_read_lines") == 0
    assert second.total("l1d_replacement") == 0


# -- scheduling ------------------------------------------------------------------


def _spmv(powerlaw):
    return generate_kernel(KernelSpec("csr_spmv", dict(rows=1000, cols=1000, nnz=10000, powerlaw=powerlaw), 11))


def test_dynamic_wins_on_power_law_and_loses_on_uniform():
    dyn8 = ScheduleAnnotation(True, "dynamic", 8, 4, 1)
    nest, inputs = _spmv(12)
    assert simulate(nest.with_schedule("m0", dyn8), inputs).runtime_cycles < simulate(nest, inputs).runtime_cycles
    nest, inputs = _spmv(0)
    assert simulate(nest.with_schedule("m0", dyn8), inputs).runtime_cycles > simulate(nest, inputs).runtime_cycles


def test_static_blocks_are_contiguous():
    nest = canonical_schedule(copy_nest(64), 4)
    res = simulate(nest, InputBindings({}))
    # each thread scans its own 16-element block: two lines of A, two of B
    assert list(res.counters[:, C["l1d_replacement"]]) == [4, 4, 4, 4]


def test_threads_capped_by_machine():
    nest = canonical_schedule(copy_nest(64), 8)
    res = simulate(nest, InputBindings({}), MachineConfig(threads=2))
    assert res.counters.shape[0] == 2
    assert (res.counters[:, C["instructions"]] > 0).all()


def test_spmm_interchange_is_faster():
    base = KernelSpec("csr_spmm", dict(rows=128, cols=128, nnz=1280, K=32, powerlaw=0, variant=0), 2)
    swapped = KernelSpec("csr_spmm", dict(rows=128, cols=128, nnz=1280, K=32, powerlaw=0, variant=1), 2)
    a, ia = generate_kernel(base)
    b, ib = generate_kernel(swapped)
    ra, rb = simulate(a, ia), simulate(b, ib)
    assert np.array_equal(ra.outputs["C"], rb.outputs["C"])
    assert ra.runtime_cycles / rb.runtime_cycles > 1


# -- vector and branch behaviour -------------------------------------------------


def test_vector_width_packs_fp_ops():
    arrays = [DataArray("A", "f64", (64,)), DataArray("B", "f64", (64,))]
    nest = build_nest("scale", arrays, [make_map("m0", "i", 0, 64)], "B[i] = A[i] * 2.0")
    inputs = InputBindings({"A": np.arange(64.0)})
    scalar = simulate(nest, inputs, ONE)
    vec = simulate(nest.with_schedule("m0", ScheduleAnnotation(vector_width=4)), inputs, ONE)
    assert np.array_equal(vec.outputs["B"], scalar.outputs["B"])
    assert scalar.total("fp64_scalar") == 64 and scalar.total("fp64_p256") == 0
    assert vec.total("fp64_p256") == 16 and vec.total("fp64_scalar") == 0
    assert vec.total("instructions") < scalar.total("instructions")
    assert vec.runtime_cycles < scalar.runtime_cycles


def test_f32_width_8_uses_256_bits():
    arrays = [DataArray("A", "f32", (64,)), DataArray("B", "f32", (64,))]
    nest = build_nest("scale", arrays, [make_map("m0", "i", 0, 64)], "B[i] = A[i] + 1.0")
    vec = simulate(nest.with_schedule("m0", ScheduleAnnotation(vector_width=8)), InputBindings({}), ONE)
    assert vec.total("fp32_p256") == 8


def test_erratic_branches_mispredict_more():
    def run(mask):
        arrays = [DataArray("A", "f64", (1024,)), DataArray("M", "bool", (1024,)), DataArray("B", "f64", (1024,))]
        body = "if M[i]:\n    B[i] = A[i]"
        nest = build_nest("mask", arrays, [make_map("m0", "i", 0, 1024)], body)
        return simulate(nest, InputBindings({"M": mask}), ONE)
    steady = run(np.ones(1024, dtype=bool))
    erratic = run(np.random.default_rng(0).random(1024) < 0.5)
    assert steady.total("branch_mispredicts") <= 2
    assert erratic.total("branch_mispredicts") > 300
    assert erratic.runtime_cycles > steady.runtime_cycles


# -- errors ----------------------------------------------------------------------


def test_out_of_bounds_reports_location():
    arrays = [DataArray("A", "f64", (8,)), DataArray("B", "f64", (8,))]
    nest = build_nest("oob", arrays, [make_map("m0", "i", 0, 8)], "B[i] = A[i + 1]")
    with pytest.raises(SimulationError, match=r"'A'.*index 8.*iteration \{'i': 7\}"):
        simulate(nest, InputBindings({}), ONE)


def test_unbound_dynamic_extent(spmv):
    nest, inputs = spmv
    arrays = dict(inputs.arrays)
    del arrays["vals"]
    with pytest.raises(SimulationError, match="unbound dynamic extent"):
        simulate(nest, InputBindings(arrays))


def test_integer_division_by_zero():
    arrays = [DataArray("A", "i64", (4,)), DataArray("B", "i64", (4,))]
    nest = build_nest("div", arrays, [make_map("m0", "i", 0, 4)], "B[i] = 10 // A[i]")
    with pytest.raises(SimulationError, match="division by zero"):
        simulate(nest, InputBindings({"A": np.array([1, 2, 0, 3])}), ONE)


def test_empty_execution():
    arrays = [DataArray("A", "f64", (4,)), DataArray("B", "f64", (4,))]
    nest = build_nest("empty", arrays, [make_map("m0", "i", 0, 0)], "B[i] = A[i]")
    res = simulate(nest, InputBindings({}), ONE)
    res.counters[:] = 0
    with pytest.raises(ValueError, match="empty execution"):
        compute_targets(res)


# -- profile and targets -----------------------------------------------------------


def test_profile_single_thread():
    res = _result([np.arange(19) + 1], [100])
    p = aggregate_profile(res).reshape(19, 5)
    assert len(aggregate_profile(res)) == 95
    assert np.array_equal(p[:, 0], p[:, 1]) and np.array_equal(p[:, 0], p[:, 2])
    assert np.array_equal(p[:, 0], p[:, 4]) and (p[:, 3] == 0).all()


def test_profile_population_std():
    rows = np.zeros((2, 19), dtype=np.int64)
    rows[:, C["instructions"]] = [10, 20]
    p = aggregate_profile(_result(rows, [1, 1], MachineConfig(threads=2)))
    assert list(p[:5]) == [10, 20, 15, 5, 30]
    assert PROFILE_COLUMNS[:5] == ("instructions.min", "instructions.max", "instructions.mean",
                                   "instructions.std", "instructions.sum")


def test_ipc():
    row = np.zeros(19, dtype=np.int64)
    row[C["instructions"]] = 1000
    t = compute_targets(_result([row], [2000]))
    assert t[TARGETS.index("ipc")] == 0.5
    assert t[TARGETS.index("runtime_cycles")] == 2000


def test_streaming_copy_has_zero_intensity():
    nest = copy_nest(4096)
    res = simulate(nest, InputBindings({}), SMALL)
    t = compute_targets(res, SMALL)
    assert t[TARGETS.index("arithmetic_intensity")] == 0.0
    assert res.total("mem_read_lines") == 2 * 4096 * 8 // 64


def test_target_ratios_in_unit_interval():
    for kind in KINDS:
        nest, inputs = generate_kernel(KernelSpec(kind, dict(SMALL_SIZES[kind]), 1, "f32"))
        t = dict(zip(TARGETS, compute_targets(simulate(nest, inputs))))
        assert t["runtime_cycles"] > 0
        for k, v in t.items():
            if "ratio" in k or k.endswith("_rate"):
                assert 0.0 <= v <= 1.0, (kind, k, v)


def test_measure_warms_small_arrays():
    nest = canonical_schedule(_scan(2048), 4)
    profile, _ = measure(nest, InputBindings({}))
    assert profile[PROFILE_COLUMNS.index("mem_read_lines.sum")] == 0


def test_measure_streaming_unchanged_by_warmup():
    nest = copy_nest(8192)
    cold = simulate(nest, InputBindings({}), SMALL)
    profile, _, warm = measure_full(nest, InputBindings({}), SMALL)
    assert abs(warm.total("mem_read_lines") - cold.total("mem_read_lines")) <= 0.01 * cold.total("mem_read_lines")


def test_measure_deterministic():
    nest, inputs = generate_kernel(KernelSpec("prime_filter", {"n": 500}, 4))
    a, ta = measure(nest, inputs)
    b, tb = measure(nest, inputs)
    assert np.array_equal(a, b) and np.array_equal(ta, tb)


def test_outer_limit_truncates():
    nest = canonical_schedule(copy_nest(64), 4)
    full = simulate(nest, InputBindings({}))
    part = simulate(nest, InputBindings({}), outer_limit=8)
    assert part.total("stores") == 8 < full.total("stores")


# -- files -----------------------------------------------------------------------


def test_bindings_round_trip(tmp_path, spmv):
    _, inputs = spmv
    inputs.save(tmp_path / "b")
    back = InputBindings.load(tmp_path / "b")
    assert back.fingerprint() == inputs.fingerprint()
    for k in inputs.arrays:
        assert back[k].dtype == inputs[k].dtype and np.array_equal(back[k], inputs[k])


def test_csv_export(tmp_path):
    path = tmp_path / "p.csv"
    export_csv(path, [("a", np.arange(95.0))], PROFILE_COLUMNS)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[1:] == list(PROFILE_COLUMNS)
    assert float(lines[1].split(",")[-1]) == 94.0


def test_machine_config():
    with pytest.raises(ValueError):
        MachineConfig(l1=CacheLevel(2 << 20))
    m = MachineConfig()
    assert MachineConfig.from_dict(m.to_dict()) == m
    assert len(COUNTERS) == 19 and len(TARGETS) == 20


def test_program_is_cached(matmul):
    assert program_for(matmul) is program_for(matmul)
