import json

import numpy as np
import pytest

from perfembed.corpus import (KINDS, KernelError, KernelSpec, MatrixMarketError, dataset_specs, generate_dataset,
                              generate_kernel, load_corpus, load_matrix_market, synthetic_csr)
from perfembed.ir import serialize, validate


def test_matmul_spec():
    nest, inputs = generate_kernel(KernelSpec("matmul", {"M": 64, "N": 64, "K": 64}, 1))
    assert nest.depth == 3 and validate(nest) == []
    assert [a.shape for a in nest.arrays] == [(64, 64)] * 3
    assert [a.name for a in nest.arrays] == ["A", "B", "C"]
    assert nest.maps[0].schedule.parallel and nest.maps[0].schedule.assignment == "static"


def test_spmv_dynamic_extent(spmv):
    nest, inputs = spmv
    ext = nest.maps[1].extents[0]
    assert ext.is_dynamic and ext.binding.array == "row_ptr"
    assert inputs["row_ptr"][-1] == 500


def test_prime_filter_has_sequential_loop():
    nest, inputs = generate_kernel(KernelSpec("prime_filter", {"n": 20000}, 0))
    assert nest.body_info.loop_vars and nest.body_info.has_control_flow
    assert inputs["A"].shape == (20000,)


def test_prime_filter_is_correct():
    from perfembed.simprof import simulate
    nest, inputs = generate_kernel(KernelSpec("prime_filter", {"n": 300}, 0))
    out = simulate(nest, inputs).outputs["B"]
    vals = inputs["A"]
    expect = [v > 1 and all(v % d for d in range(2, int(v ** 0.5) + 1)) for v in vals]
    assert list(out) == expect


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic_in_seed(kind):
    from test_simprof import SMALL_SIZES
    spec = KernelSpec(kind, dict(SMALL_SIZES[kind]), 9, "f32")
    (n1, i1), (n2, i2) = generate_kernel(spec), generate_kernel(spec)
    assert n1 == n2 and i1.fingerprint() == i2.fingerprint()
    assert validate(n1) == []
    other = generate_kernel(KernelSpec(kind, dict(SMALL_SIZES[kind]), 10, "f32"))[1]
    if kind != "prime_filter":
        assert other.fingerprint() != i1.fingerprint()


def test_spec_errors():
    with pytest.raises(KernelError, match="unsupported kind"):
        generate_kernel(KernelSpec("fft", {}, 0))
    with pytest.raises(KernelError, match="missing"):
        generate_kernel(KernelSpec("matmul", {"M": 4}, 0))
    with pytest.raises(KernelError, match="positive"):
        generate_kernel(KernelSpec("map", {"N": 0}, 0))
    with pytest.raises(KernelError, match="variant"):
        generate_kernel(KernelSpec("matmul", {"M": 4, "N": 4, "K": 4, "variant": 7}, 0))
    with pytest.raises(KernelError, match="dtype"):
        generate_kernel(KernelSpec("map", {"N": 4}, 0, "f16"))


# -- CSR --------------------------------------------------------------------------


@pytest.mark.parametrize("powerlaw", [0.0, 0.8, 1.5])
def test_synthetic_csr_invariants(powerlaw):
    m = synthetic_csr(200, 150, 2000, powerlaw=powerlaw, seed=3)
    m.check()
    assert m.row_ptr[0] == 0 and m.row_ptr[-1] == m.nnz == len(m.col_idx)
    assert np.all(np.diff(m.row_ptr) >= 0)
    assert m.col_idx.min() >= 0 and m.col_idx.max() < 150
    lengths = m.row_lengths()
    if powerlaw == 0:
        assert lengths.max() - lengths.min() <= 1
    else:
        assert lengths[0] > 5 * np.median(lengths)


def _mtx(tmp_path, text, name="m.mtx"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_mm_identity(tmp_path):
    m = load_matrix_market(_mtx(tmp_path, "%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1.0\n2 2 1.0\n"))
    assert list(m.row_ptr) == [0, 1, 2] and list(m.col_idx) == [0, 1]


def test_mm_symmetric_expansion(tmp_path):
    text = "%%MatrixMarket matrix coordinate real symmetric\n3 3 3\n1 1 4.0\n2 1 2.5\n3 3 1.0\n"
    m = load_matrix_market(_mtx(tmp_path, text))
    dense = np.zeros((3, 3))
    for r in range(3):
        for k in range(m.row_ptr[r], m.row_ptr[r + 1]):
            dense[r, m.col_idx[k]] = m.values[k]
    assert dense[0, 1] == dense[1, 0] == 2.5
    assert m.nnz == 4  # 3 header entries + the mirrored off-diagonal


def test_mm_pattern_and_duplicates(tmp_path):
    text = "%%MatrixMarket matrix coordinate pattern general\n2 3 3\n1 3\n1 3\n2 1\n"
    m = load_matrix_market(_mtx(tmp_path, text))
    assert list(m.row_ptr) == [0, 1, 2] and list(m.col_idx) == [2, 0]
    assert list(m.values) == [2.0, 1.0]


@pytest.mark.parametrize("text,msg", [
    ("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n", "unsupported format: array"),
    ("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n", "unsupported field"),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", "out of bounds"),
    ("%%MatrixMarket vector coordinate real\n", "malformed header"),
    ("2 2 1\n1 1 1.0\n", "malformed header"),
    ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n", "expected 2 entries"),
])
def test_mm_errors(tmp_path, text, msg):
    with pytest.raises(MatrixMarketError, match=msg):
        load_matrix_market(_mtx(tmp_path, text))


# -- datasets ---------------------------------------------------------------------


def test_dataset_disjoint_and_deterministic(tmp_path):
    counts = {"train": 200, "val": 50, "test": 50}
    p1 = generate_dataset(tmp_path / "a", counts, seed=5)
    p2 = generate_dataset(tmp_path / "b", counts, seed=5)
    assert p1.read_bytes() == p2.read_bytes()
    manifest = json.loads(p1.read_text())
    entries = manifest["entries"]
    assert len(entries) == 300
    files = [e["nest"] for e in entries]
    assert len(set(files)) == 300
    texts = {(tmp_path / "a" / f).read_text() for f in files}
    assert len(texts) == 300
    by_split = {s: {e["nest"] for e in entries if e["split"] == s} for s in ("train", "val", "test")}
    assert not (by_split["train"] & by_split["val"]) and not (by_split["train"] & by_split["test"])
    assert {len(v) for v in by_split.values()} == {200, 50}
    kinds = {e["kind"] for e in entries if e["split"] == "train"}
    assert kinds == set(KINDS)
    assert "size_ranges" in manifest


def test_dataset_loads_back(tmp_path):
    path = generate_dataset(tmp_path, {"train": 11, "val": 2, "test": 2}, seed=1)
    entries = load_corpus(path)
    assert len(entries) == 15
    for e in entries:
        nest, inputs = generate_kernel(e.spec)
        assert serialize(nest) == serialize(e.nest)
        assert inputs.fingerprint() == e.inputs.fingerprint()


def test_dataset_counts_positive():
    with pytest.raises(ValueError):
        dataset_specs({"train": 0, "val": 1, "test": 1})
