import math

import numpy as np
import pytest

from conftest import copy_nest, matmul_nest
from oracles import brute_assignment
from perfembed.corpus import KernelSpec, generate_kernel
from perfembed.encoder import encode_static
from perfembed.ir import parse_loopnest
from perfembed.model import ModelConfig, Sample, TrainConfig, train
from perfembed.simprof import DESK_MACHINE, InputBindings, measure
from perfembed.transform import SCHEDULE_ONLY, SpaceLimits, Transformation, apply_sequence
from perfembed.tuning import (Database, DatabaseError, StepRecord, brute_force_tune, build_database, cost_of,
                              db_add, db_load, db_query, db_save, embed_nest, hungarian, make_entry,
                              match_transformation, transfer_tune)

T = Transformation
SMALL = SpaceLimits(tile_sizes=(4,), vector_widths=(1,), chunk_sizes=(), max_length=2)


def _mm(n, seed=0):
    rng = np.random.default_rng(seed)
    return matmul_nest(n), InputBindings({"A": rng.random((n, n)), "B": rng.random((n, n))})


def _copy(n):
    return copy_nest(n), InputBindings({"A": np.arange(n, dtype=float)})


@pytest.fixture(scope="module")
def model():
    items = [_mm(6), _mm(8, 1), _mm(12, 2), _copy(64), _copy(256)]
    items.append(generate_kernel(KernelSpec("minplus_matmul", {"M": 8, "N": 8, "K": 8}, 0)))
    samples = []
    for i, (nest, inputs) in enumerate(items):
        prof, targ = measure(nest, inputs, DESK_MACHINE)
        samples.append(Sample(f"s{i}", encode_static(nest), prof, targ))
    cfg = ModelConfig(embed_dim=8, gnn_layers=2, attention_heads=2, mlp_hidden=8, seed=0)
    return train({"train": samples, "val": samples[:2]}, TrainConfig(epochs=3), cfg)


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------


def test_hungarian_examples():
    a = hungarian([[0.0]])
    assert a.mapping == {0: 0} and a.total_cost == 0.0
    b = hungarian([[1, 2], [2, 1]])
    assert b.mapping == {0: 0, 1: 1} and b.total_cost == 2.0


def test_hungarian_matches_permutation_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        C = rng.random((5, 7))
        a = hungarian(C)
        assert a.total_cost == pytest.approx(brute_assignment(C), abs=1e-12)
        assert sorted(a.mapping) == list(range(5)) and len(set(a.mapping.values())) == 5


def test_hungarian_with_infinities():
    rng = np.random.default_rng(1)
    for _ in range(40):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(n, 8))
        C = rng.integers(0, 5, size=(n, m)).astype(float)
        C[rng.random((n, m)) < 0.4] = math.inf
        want = brute_assignment(C)
        a = hungarian(C)
        if math.isinf(want):
            assert a is None
        else:
            assert a.total_cost == want


def test_hungarian_lexicographic_ties():
    assert hungarian(np.zeros((2, 3))).mapping == {0: 0, 1: 1}
    assert hungarian([[1, 1], [1, 1]]).mapping == {0: 0, 1: 1}


def test_hungarian_errors():
    assert hungarian([[math.inf, 1.0], [math.inf, 2.0]]) is None
    for bad in ([[1.0], [2.0]], [[-1.0]], [[math.nan]]):
        with pytest.raises(ValueError):
            hungarian(bad)


# ---------------------------------------------------------------------------
# matching and transfer
# ---------------------------------------------------------------------------


SEQ = [T("tile", ("m1",), 4), T("interchange", ("m0", "m1_o"))]


def test_matching_identity(model):
    nest, inputs = _mm(8)
    entry = make_entry("mm8", nest, inputs, SEQ, model, DESK_MACHINE)
    cur = nest
    for step in entry.steps:
        emb = embed_nest(model, cur, inputs, DESK_MACHINE)
        got = match_transformation(step, cur, emb.graph, emb.node_embeddings)
        assert got == step.transformation
        cur = apply_sequence([got], cur)


def test_matching_infeasible(model):
    nest, inputs = _mm(8)
    entry = make_entry("mm8", nest, inputs, [T("interchange", ("m1", "m2"))], model, DESK_MACHINE)
    target, tin = _copy(32)
    emb = embed_nest(model, target, tin, DESK_MACHINE)
    res = match_transformation(entry.steps[0], target, emb.graph, emb.node_embeddings)
    assert not res and res.reason == "infeasible"


def test_matching_dimension_mismatch(model):
    nest, inputs = _mm(8)
    emb = embed_nest(model, nest, inputs, DESK_MACHINE)
    step = StepRecord(T("tile", ("m0",), 4), ["entry:m0"], ["map_entry"], np.zeros((1, 3)))
    with pytest.raises(ValueError):
        match_transformation(step, nest, emb.graph, emb.node_embeddings)


def test_matmul_tiling_onto_minplus(model):
    nest, inputs = _mm(8)
    entry = make_entry("mm8", nest, inputs, [T("tile", ("m2",), 4)], model, DESK_MACHINE)
    target, tin = generate_kernel(KernelSpec("minplus_matmul", {"M": 8, "N": 8, "K": 8}, 0))
    emb = embed_nest(model, target, tin, DESK_MACHINE)
    got = match_transformation(entry.steps[0], target, emb.graph, emb.node_embeddings)
    assert got and got.kind == "tile" and got.arg == 4
    assert got.maps[0] in {m.id for m in target.maps}


def _db(model, entries):
    db = Database(model.fingerprint(), model.config.embed_dim)
    for e in entries:
        db_add(db, e)
    return db


def test_transfer_self_match(model):
    nest, inputs = _mm(12, 2)
    res = brute_force_tune(nest, inputs, DESK_MACHINE, SMALL)
    assert res.sequence
    entry = make_entry("mm12", nest, inputs, res.sequence, model, DESK_MACHINE, res.baseline_cost, res.best_cost)
    rep = transfer_tune(nest, inputs, _db(model, [entry]), model, DESK_MACHINE, k=1)
    assert rep.sequence == res.sequence
    assert rep.best_cost == res.best_cost
    assert rep.evaluations == 2


def test_transfer_baseline_fallback(model):
    nest, inputs = _mm(8)
    entry = make_entry("mm8", nest, inputs, [T("interchange", ("m1", "m2"))], model, DESK_MACHINE)
    target, tin = _copy(64)
    rep = transfer_tune(target, tin, _db(model, [entry]), model, DESK_MACHINE, k=5)
    assert rep.sequence == [] and rep.best_cost == rep.baseline_cost
    assert rep.evaluations == 1
    assert rep.neighbors[0].skipped[0][1] == "infeasible"


def test_transfer_leave_one_out_and_no_regression(model):
    items = [("a", *_mm(8)), ("b", *_mm(12, 2)), ("c", *_copy(64))]
    db, bf = build_database(items, model, DESK_MACHINE, SMALL)
    for eid, nest, inputs in items:
        rep = transfer_tune(nest, inputs, db, model, DESK_MACHINE, k=5, target_id=eid)
        assert all(n.id != eid for n in rep.neighbors)
        assert rep.best_cost <= rep.baseline_cost
        assert rep.evaluations <= 6
        assert rep.to_dict()["target"] == eid


def test_transfer_errors(model, tmp_path):
    nest, inputs = _mm(8)
    with pytest.raises(DatabaseError, match="empty database"):
        transfer_tune(nest, inputs, Database(model.fingerprint(), 8), model)
    entry = make_entry("mm8", nest, inputs, SEQ, model, DESK_MACHINE)
    db = Database("other", 8, [entry])
    with pytest.raises(DatabaseError, match="fingerprint"):
        transfer_tune(nest, inputs, db, model)


# ---------------------------------------------------------------------------
# brute force
# ---------------------------------------------------------------------------


def test_brute_force_single_point():
    nest, inputs = _copy(64)
    res = brute_force_tune(nest, inputs, DESK_MACHINE, SpaceLimits(tile_sizes=(), vector_widths=(1,),
                                                                    chunk_sizes=(), interchange=False))
    assert res.space_size == 1 and res.sequence == [] and res.best_cost == res.baseline_cost


@pytest.mark.parametrize("powerlaw,want", [(15, "dynamic:8"), (0, None)])
def test_brute_force_spmv_schedule(powerlaw, want):
    nest, inputs = generate_kernel(KernelSpec("csr_spmv", {"rows": 400, "cols": 400, "nnz": 4000,
                                                            "powerlaw": powerlaw}, 3))
    res = brute_force_tune(nest, inputs, DESK_MACHINE, SCHEDULE_ONLY)
    assert res.space_size == 2
    assert [t.arg for t in res.sequence] == ([want] if want else [])


def test_brute_force_exhaustive():
    nest, inputs = _mm(12, 2)
    res = brute_force_tune(nest, inputs, DESK_MACHINE, SMALL)
    assert all(res.best_cost <= c for _, c in res.costs)
    from perfembed.transform import enumerate_space
    rng = np.random.default_rng(0)
    space = list(enumerate_space(nest, SMALL))
    for i in rng.choice(len(space), size=min(10, len(space)), replace=False):
        assert cost_of(apply_sequence(space[i], nest), inputs, DESK_MACHINE)[1] == res.costs[i][1]


# ---------------------------------------------------------------------------
# database
# ---------------------------------------------------------------------------


def test_db_invariants(model):
    nest, inputs = _mm(8)
    e = make_entry("mm8", nest, inputs, SEQ, model, DESK_MACHINE, 100.0, 90.0)
    db = _db(model, [e])
    with pytest.raises(DatabaseError, match="duplicate"):
        db_add(db, e)
    bad = make_entry("x", nest, inputs, SEQ, model, DESK_MACHINE, 100.0, 120.0)
    with pytest.raises(DatabaseError, match="exceeds baseline"):
        db_add(db, bad)
    wrong = Database(model.fingerprint(), 5)
    with pytest.raises(DatabaseError, match="dimension"):
        db_add(wrong, make_entry("y", nest, inputs, SEQ, model, DESK_MACHINE, 100.0, 90.0))
    assert parse_loopnest(e.nest) == nest
    assert e.sequence == SEQ


def test_db_save_load(model, tmp_path):
    items = [("a", *_mm(8)), ("b", *_mm(12, 2)), ("c", *_copy(64))]
    db, bf = build_database(items, model, DESK_MACHINE, SMALL)
    improved = [i for i, r in bf.items() if r.best_cost < r.baseline_cost]
    assert sorted(e.id for e in db.entries) == sorted(improved)
    path = tmp_path / "db.npz"
    db_save(db, path)
    back = db_load(path, model.fingerprint())
    q = db.entries[0].nest_embedding + 0.01
    assert [(e.id, d) for e, d in db_query(back, q, 3)] == [(e.id, d) for e, d in db_query(db, q, 3)]
    for a, b in zip(db.entries, back.entries):
        assert np.array_equal(a.node_embeddings, b.node_embeddings)
        assert a.sequence == b.sequence and a.optimized_cost == b.optimized_cost
        assert [s.node_ids for s in a.steps] == [s.node_ids for s in b.steps]
        assert all(np.array_equal(s.embeddings, t.embeddings) for s, t in zip(a.steps, b.steps))
    with pytest.raises(DatabaseError, match="built with model"):
        db_load(path, "0" * 16)
    path.write_bytes(path.read_bytes()[:100])
    with pytest.raises(DatabaseError, match="corrupt"):
        db_load(path)
