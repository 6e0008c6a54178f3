import numpy as np
import pytest

from conftest import matmul_nest
from oracles import matmul_space_count
from perfembed.corpus import KernelSpec, generate_kernel
from perfembed.corpus.kernels import VARIANTS
from perfembed.encoder import encode_static
from perfembed.ir import DataArray, build_nest, canonical_schedule, make_map, validate
from perfembed.simprof import InputBindings, simulate
from perfembed.transform import (SCHEDULE_ONLY, SpaceLimits, Transformation, TransformError, applicable, apply,
                                 apply_sequence, enumerate_space, induced_subgraph, parse_transformation,
                                 sequence_from_json, sequence_to_json, space_size)
from test_simprof import SMALL_SIZES

T = Transformation


def _nest(name, arrays, maps, body, threads=4):
    return canonical_schedule(build_nest(name, arrays, maps, body), threads)


def _copy1d(n):
    return _nest("copy", [DataArray("A", "f64", (n,)), DataArray("B", "f64", (n,))], [make_map("m0", "i", 0, n)],
                 "B[i] = A[i]")


def _copy2d(n, m):
    arrays = [DataArray("A", "f64", (n, m)), DataArray("B", "f64", (n, m))]
    return _nest("copy2", arrays, [make_map("m0", "i", 0, n), make_map("m1", "j", 0, m)], "B[i, j] = A[i, j]")


@pytest.fixture
def csr_spmv():
    return generate_kernel(KernelSpec("csr_spmv", {"rows": 40, "cols": 30, "nnz": 200, "powerlaw": 12}, 7))


def test_interchange_on_matmul(matmul):
    assert applicable(T("interchange", ("m1", "m2")), matmul)


def test_tile_dynamic_extent(csr_spmv):
    ok = applicable(T("tile", ("m1",), 8), csr_spmv[0])
    assert not ok and ok.reason == "dynamic extent"


def test_vectorize_unit_stride():
    assert applicable(T("vectorize", ("m1",), 4), _copy2d(8, 64))


def test_vectorize_rejections(matmul):
    assert "unit-stride" in applicable(T("vectorize", ("m2",), 4), matmul).reason
    assert "innermost" in applicable(T("vectorize", ("m0",), 4), matmul).reason
    assert "width" in applicable(T("vectorize", ("m2",), 3), matmul).reason


def test_vectorize_dynamic_inner(csr_spmv):
    assert applicable(T("vectorize", ("m1",), 4), csr_spmv[0]).reason == "dynamic extent"


def test_tile_even():
    out = apply(T("tile", ("m0",), 32), _copy1d(1024))
    outer, inner = out.maps
    assert (outer.id, outer.params, outer.extents[0].end) == ("m0_o", ("i_o",), "32")
    assert inner.extents[0].begin == "32 * i_o" and inner.extents[0].end == "32 * i_o + 32"
    assert outer.schedule.parallel


def test_tile_guarded():
    nest = _copy1d(100)
    out = apply(T("tile", ("m0",), 32), nest)
    assert out.maps[0].extents[0].end == "4"
    assert out.maps[1].extents[0].end == "min(32 * i_o + 32, 100)"
    inputs = InputBindings({"A": np.arange(100.0)})
    assert np.array_equal(simulate(out, inputs).outputs["B"], np.arange(100.0))


def test_tile_rejections():
    nest = _copy1d(16)
    assert "tile size" in applicable(T("tile", ("m0",), 16), nest).reason
    once = apply(T("tile", ("m0",), 4), nest)
    assert "compile-time constant" in applicable(T("tile", ("m0",), 2), once).reason


def test_set_schedule_outputs_identical(csr_spmv):
    nest, inputs = csr_spmv
    out = apply(T("set_schedule", ("m0",), "dynamic:8"), nest)
    assert (out.maps[0].schedule.assignment, out.maps[0].schedule.chunk) == ("dynamic", 8)
    a, b = simulate(nest, inputs).outputs, simulate(out, inputs).outputs
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_set_schedule_needs_parallel(matmul):
    assert "not parallel" in applicable(T("set_schedule", ("m1",), "dynamic:8"), matmul).reason
    assert "unchanged" in applicable(T("set_schedule", ("m0",), "static"), matmul).reason


def test_apply_inapplicable_raises(csr_spmv):
    with pytest.raises(TransformError, match="dynamic extent"):
        apply(T("tile", ("m1",), 8), csr_spmv[0])
    with pytest.raises(TransformError, match="unknown map"):
        apply(T("tile", ("zz",), 8), csr_spmv[0])


def test_interchange_dependent_extent(csr_spmv):
    ok = applicable(T("interchange", ("m0", "m1")), csr_spmv[0])
    assert not ok and "depends on inner iterator" in ok.reason


def test_interchange_keeps_reduction_order():
    arrays = [DataArray("A", "f64", (8, 6)), DataArray("s", "f64", (1,))]
    nest = build_nest("sum", arrays, [make_map("m0", "i", 0, 8), make_map("m1", "j", 0, 6)], "s[0] += A[i, j]")
    assert "reorders" in applicable(T("interchange", ("m0", "m1")), nest).reason


def test_parallelize_needs_ownership():
    arrays = [DataArray("A", "f64", (8, 6)), DataArray("out", "f64", (8,))]
    nest = _nest("rows", arrays, [make_map("m0", "i", 0, 8), make_map("m1", "j", 0, 6)], "out[i] += A[i, j]", 4)
    assert applicable(T("parallelize", ("m0",), 2), nest)
    assert "own" in applicable(T("parallelize", ("m1",), 4), nest).reason


def test_tiled_parallel_loop_still_owns(matmul):
    tiled = apply(T("tile", ("m0",), 8), matmul)
    assert tiled.maps[0].schedule.parallel
    assert applicable(T("interchange", ("m1", "m2")), tiled)


def test_parallelize_clears_other_maps(matmul):
    out = apply(T("parallelize", ("m1",), 2), matmul)
    assert [m.schedule.parallel for m in out.maps] == [False, True, False]
    assert out.maps[1].schedule.threads == 2


def test_interchange_involution(matmul):
    t = T("interchange", ("m1", "m2"))
    once = apply(t, matmul)
    assert [m.id for m in once.maps] == ["m0", "m2", "m1"]
    assert apply(t, once) == matmul


def test_induced_subgraph(matmul):
    g = encode_static(matmul)
    origins = set(g.node_origin.values())
    sub = induced_subgraph(T("interchange", ("m0", "m1")), matmul)
    assert sub[:2] == ["entry:m0", "entry:m1"]
    mems = sub[2:]
    assert mems == sorted(mems) and mems
    assert all(m.src in ("entry:m0", "entry:m1") or m.dst in ("entry:m0", "entry:m1")
               for m in matmul.memlets if m.id in mems)
    assert set(sub) <= origins
    tile = induced_subgraph(T("tile", ("m2",), 8), matmul)
    assert tile[0] == "entry:m2" and set(tile) <= origins
    with pytest.raises(TransformError):
        induced_subgraph(T("tile", ("zz",), 8), matmul)


def test_text_round_trip():
    seq = [T("tile", ("m1",), 32), T("interchange", ("m0", "m1")), T("set_schedule", ("m0",), "dynamic:8"),
           T("parallelize", ("m0",), 4), T("vectorize", ("m2",), 4)]
    assert [t.to_text() for t in seq][:3] == ["tile(m1, 32)", "interchange(m0, m1)", "set_schedule(m0, dynamic:8)"]
    assert [parse_transformation(t.to_text()) for t in seq] == seq
    assert sequence_from_json(sequence_to_json(seq)) == seq


@pytest.mark.parametrize("bad", [("fuse", ("m0",), 1), ("tile", ("m0",), 0), ("interchange", ("m0", "m0"), None),
                                 ("set_schedule", ("m0",), "guided"), ("vectorize", ("m0", "m1"), 4)])
def test_transformation_validation(bad):
    with pytest.raises(TransformError):
        T(*bad)


@pytest.mark.parametrize("limits", [
    dict(tile_sizes=(8, 32), width=4, max_length=3),
    dict(tile_sizes=(16, 32), width=4, max_length=3),
    dict(tile_sizes=(8, 16, 32), width=1, max_length=4),
    dict(tile_sizes=(8,), width=4, max_length=2),
])
def test_space_size_matches_hand_count(matmul, limits):
    lim = SpaceLimits(tile_sizes=limits["tile_sizes"], vector_widths=(1, limits["width"]), chunk_sizes=(),
                      max_length=limits["max_length"])
    assert space_size(matmul, lim) == matmul_space_count(limits["tile_sizes"], limits["width"],
                                                         limits["max_length"])


def test_hand_count_frozen(matmul):
    # value computed by the independent counter in tests/oracles.py
    assert matmul_space_count((8, 32), 4, 3) == 121
    lim = SpaceLimits(tile_sizes=(8, 32), vector_widths=(1, 4), chunk_sizes=(), max_length=3)
    assert space_size(matmul, lim) == 121


def test_zero_options(matmul):
    lim = SpaceLimits(tile_sizes=(), vector_widths=(1,), chunk_sizes=(), interchange=False)
    assert list(enumerate_space(matmul, lim)) == [[]]
    assert list(enumerate_space(matmul, SpaceLimits(max_length=0))) == [[]]


def test_schedule_only_space(csr_spmv):
    space = list(enumerate_space(csr_spmv[0], SCHEDULE_ONLY))
    assert space == [[], [T("set_schedule", ("m0",), "dynamic:8")]]


def test_enumeration_deterministic_and_applicable(matmul):
    a = list(enumerate_space(matmul))
    assert a == list(enumerate_space(matmul))
    assert len({tuple(s) for s in a}) == len(a)
    for seq in a:
        assert validate(apply_sequence(seq, matmul)) == []


def test_limits_round_trip():
    lim = SpaceLimits(tile_sizes=(4,), parallel_threads=(2, 4), max_length=2)
    assert SpaceLimits.from_dict(lim.to_dict()) == lim


@pytest.mark.parametrize("kind", sorted(SMALL_SIZES))
def test_semantic_preservation(kind):
    for v in range(VARIANTS[kind]):
        nest, inputs = generate_kernel(KernelSpec(kind, dict(SMALL_SIZES[kind], variant=v), 0))
        base = simulate(nest, inputs).outputs
        for seq in enumerate_space(nest):
            out = simulate(apply_sequence(seq, nest), inputs).outputs
            assert all(np.array_equal(out[k], base[k]) for k in base), (kind, v, [t.to_text() for t in seq])
