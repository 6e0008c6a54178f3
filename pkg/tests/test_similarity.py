import csv

import numpy as np
import pytest

from conftest import copy_nest, matmul_nest
from perfembed.ir import DataArray, build_nest, make_map
from perfembed.similarity import (EmbeddingIndex, coefficient_of_variation, data_locality, export_embeddings, knn,
                                  performance_similarity, reuse_distance_features)
from perfembed.simprof import DESK_MACHINE, InputBindings
from perfembed.transform import Transformation, apply_sequence


def test_exact_match_first():
    idx = EmbeddingIndex(["a", "b", "c"], [[0.0, 1.0], [2.0, 2.0], [5.0, 0.0]])
    assert knn(idx, [2.0, 2.0], 1) == [("b", 0.0)]


def test_one_dimensional_example():
    idx = EmbeddingIndex(["p0", "p1", "p10"], [[0.0], [1.0], [10.0]])
    assert [i for i, _ in knn(idx, [0.4], 2)] == ["p0", "p1"]


def test_random_points_match_sort_oracle(rng):
    X = rng.normal(size=(20, 8))
    ids = [f"n{i:02d}" for i in range(20)]
    idx = EmbeddingIndex(ids, X)
    for _ in range(10):
        q = rng.normal(size=8)
        d = ((X - q) ** 2).sum(1)
        want = sorted(range(20), key=lambda i: (d[i], ids[i]))[:5]
        got = knn(idx, q, 5)
        assert [i for i, _ in got] == [ids[i] for i in want]
        assert np.allclose([x for _, x in got], d[want])


def test_ties_by_id_and_exclude():
    idx = EmbeddingIndex(["b", "a", "c"], [[1.0], [1.0], [0.0]])
    assert [i for i, _ in knn(idx, [1.0], 3)] == ["a", "b", "c"]
    assert [i for i, _ in knn(idx, [1.0], 3, exclude="a")] == ["b", "c"]
    assert len(knn(idx, [0.0], 10)) == 3


def test_knn_errors():
    with pytest.raises(ValueError, match="empty"):
        knn(EmbeddingIndex([], np.zeros((0, 2))), [0, 0], 1)
    idx = EmbeddingIndex(["a"], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        knn(idx, [0.0, 0.0], 0)
    with pytest.raises(ValueError, match="dimension"):
        knn(idx, [0.0], 1)
    with pytest.raises(ValueError, match="unique"):
        EmbeddingIndex(["a", "a"], [[0.0], [1.0]])


def test_cov_closed_form():
    assert coefficient_of_variation([1, 1, 1, 3]) == pytest.approx(np.sqrt(0.75) / 1.5)
    assert coefficient_of_variation([2, 2]) == 0.0


def _line_index(n=8):
    return EmbeddingIndex([f"x{i}" for i in range(n)], np.arange(n, dtype=float)[:, None])


def test_similarity_all_equal():
    idx = _line_index()
    assert performance_similarity(idx, {i: 4.0 for i in idx.ids}).mean_cov == 0.0


def test_similarity_scale_invariant(rng):
    idx = _line_index()
    vals = {i: float(v) for i, v in zip(idx.ids, rng.random(8) + 0.1)}
    a = performance_similarity(idx, vals)
    b = performance_similarity(idx, {i: 7.5 * v for i, v in vals.items()})
    assert a.covs.keys() == b.covs.keys()
    assert all(a.covs[i] == pytest.approx(b.covs[i], rel=1e-12) for i in a.covs)


def test_similarity_excludes_zero_mean():
    idx = _line_index()
    vals = {i: 0.0 for i in idx.ids}
    vals["x7"] = 1.0
    res = performance_similarity(idx, vals)
    assert "x0" in res.excluded and "x7" not in res.excluded
    assert res.mean_cov > 0


def test_similarity_errors():
    idx = _line_index(3)
    with pytest.raises(ValueError):
        performance_similarity(idx, {i: 1.0 for i in idx.ids}, k=3)
    with pytest.raises(ValueError, match="no metric"):
        performance_similarity(idx, {"x0": 1.0}, k=1)


def _scan(n):
    arrays = [DataArray("A", "f64", (n,)), DataArray("s", "f64", (1,))]
    return build_nest("scan", arrays, [make_map("m0", "i", 0, n)], "s[0] += A[i]")


def test_baseline_stride_one():
    # stride-1 read of A and write of B, each missing once per 8 elements
    f = reuse_distance_features(copy_nest(400), InputBindings({"A": np.ones(400)}))
    assert f.cache_miss_ratio == 1 / 8
    # A plus the write-allocated B; nothing is evicted in the short cold run
    assert (f.bytes_read, f.bytes_written) == (6400.0, 0.0)


def test_baseline_copy_intensity_zero():
    f = reuse_distance_features(copy_nest(4096), InputBindings({"A": np.ones(4096)}))
    assert f.arithmetic_intensity == 0.0
    s = reuse_distance_features(_scan(1024), InputBindings({"A": np.ones(1024)}))
    assert s.arithmetic_intensity > 0


def test_baseline_truncates_outer_iterations():
    full = reuse_distance_features(_scan(100), InputBindings({"A": np.ones(100)}))
    trunc = reuse_distance_features(_scan(100), InputBindings({"A": np.ones(100)}), iterations=1000)
    assert full == trunc
    short = reuse_distance_features(_scan(4096), InputBindings({"A": np.ones(4096)}))
    # 500 elements of A span 63 lines, plus the line holding s
    assert short.bytes_read == 64 * 64


def test_data_locality_streaming():
    assert data_locality(_scan(1 << 14), InputBindings({"A": np.ones(1 << 14)})) == 1.0


def test_data_locality_tiling_helps():
    rng = np.random.default_rng(0)
    nest = matmul_nest(48)
    inputs = InputBindings({"A": rng.random((48, 48)), "B": rng.random((48, 48))})
    before = data_locality(nest, inputs, DESK_MACHINE)
    tiled = apply_sequence([Transformation("tile", ("m1",), 16), Transformation("interchange", ("m0", "m1_o"))], nest)
    after = data_locality(tiled, inputs, DESK_MACHINE)
    assert before < 1.0
    assert after > before


def test_export(tmp_path, rng):
    E = rng.normal(size=(3, 4))
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    labels = {"kind": ["x", "y", "z"], "bw": [1.0, 2.0, 3.0]}
    export_embeddings(p1, ["i0", "i1", "i2"], E, labels)
    export_embeddings(p2, ["i0", "i1", "i2"], E, labels)
    rows = list(csv.reader(p1.open()))
    assert rows[0] == ["id", "bw", "kind", "e0", "e1", "e2", "e3"]
    assert len(rows) == 4
    assert p1.read_bytes() == p2.read_bytes()
    assert float(rows[2][3]) == E[1, 0]
