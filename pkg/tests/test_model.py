import numpy as np
import pytest

from conftest import copy_nest, matmul_nest
from oracles import fd_gradients, gradient_violations
from perfembed.encoder import EncodedGraph, EncodedNode, encode_static
from perfembed.model import (N_PROFILE, N_TARGETS, LayoutVersionError, ModelConfig, ModelError, ModelFileError,
                             Sample, TrainConfig, forward, init_model, load_model, loss, loss_and_grads, make_batch,
                             save_model, train)

TINY = ModelConfig(embed_dim=8, gnn_layers=2, attention_heads=4, mlp_hidden=6, seed=1)


def _perturbed(cfg, seed, scale=0.3):
    p = init_model(cfg)
    rng = np.random.default_rng(seed)
    for k in p.weights:
        p.weights[k] = p.weights[k] + rng.normal(0, scale, p.weights[k].shape)
    return p


def _sample(i, nest, rng):
    return Sample(f"s{i}", encode_static(nest), rng.random(N_PROFILE) * 100, rng.random(N_TARGETS))


def test_init_deterministic():
    a, b = init_model(TINY), init_model(TINY)
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
    c = init_model(ModelConfig(embed_dim=8, gnn_layers=2, attention_heads=4, mlp_hidden=6, seed=2))
    assert not np.array_equal(a.weights["W_in"], c.weights["W_in"])


def test_head_dim_shapes():
    cfg = ModelConfig(embed_dim=8, attention_heads=4)
    assert cfg.head_dim == 2
    p = init_model(cfg)
    assert p.weights["L0.Wq"].shape == (8, 8)
    out = forward(p, encode_static(copy_nest()), np.zeros(N_PROFILE))
    assert out["nest_embedding"].shape == (8,)
    assert out["prediction"].shape == (N_TARGETS,)
    assert out["node_embeddings"].shape == (encode_static(copy_nest()).num_nodes, 8)


def test_divisibility_error():
    with pytest.raises(ModelError):
        ModelConfig(embed_dim=6, attention_heads=4)


def test_zero_params_give_zero_outputs():
    p = init_model(TINY).zeros_like()
    out = forward(p, encode_static(matmul_nest(8)), np.ones(N_PROFILE))
    assert not out["nest_embedding"].any()
    assert not out["prediction"].any()


def _permute(g: EncodedGraph, perm) -> EncodedGraph:
    """Node ``perm[i]`` of the new graph is old node ``i``."""
    inv = np.argsort(perm)
    nodes = [g.nodes[j] for j in inv]
    edges = perm[np.asarray(g.edges)]
    return EncodedGraph([EncodedNode(n.kind, n.features, n.origin) for n in nodes], edges, g.layout_version,
                        {i: n.origin for i, n in enumerate(nodes)})


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    p = _perturbed(TINY, 0)
    g = encode_static(matmul_nest(8))
    prof = rng.normal(size=N_PROFILE)
    a = forward(p, g, prof)["nest_embedding"]
    perm = rng.permutation(g.num_nodes)
    b = forward(p, _permute(g, perm), prof)["nest_embedding"]
    assert np.allclose(a, b, atol=1e-6, rtol=0)


def test_profile_branch_is_live():
    p = _perturbed(TINY, 0)
    g = encode_static(copy_nest())
    a = forward(p, g, np.zeros(N_PROFILE))["nest_embedding"]
    b = forward(p, g, np.full(N_PROFILE, 0.5))["nest_embedding"]
    assert not np.allclose(a, b)


def test_loss_examples():
    t = np.arange(20.0)
    assert loss(t, t) == 0.0
    assert loss(t + 1, t) == 1.0
    with pytest.raises(ModelError, match="length mismatch"):
        loss(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = _perturbed(TINY, seed)
    b = make_batch([encode_static(copy_nest()), encode_static(matmul_nest(4))], rng.normal(size=(2, N_PROFILE)))
    t = rng.normal(size=(2, N_TARGETS))
    _, g = loss_and_grads(p, b, t)
    assert gradient_violations(g, fd_gradients(p, b, t)) == []


def test_layout_mismatch_in_batch():
    g = encode_static(copy_nest())
    with pytest.raises(ModelError, match="feature layout mismatch"):
        make_batch([g], [np.zeros(N_PROFILE)], "other-layout")


def test_memorize_single_sample():
    rng = np.random.default_rng(0)
    s = _sample(0, matmul_nest(8), rng)
    ds = {"train": [s], "val": [s]}
    m = train(ds, TrainConfig(epochs=200, batch_size=1), TINY)
    assert m.history[-1]["train_loss"] < 0.05
    assert len(m.history) == 201 and m.history[0]["epoch"] == 0


def test_training_deterministic_and_learns():
    rng = np.random.default_rng(1)
    nests = [copy_nest(8 * (i + 1)) for i in range(6)] + [matmul_nest(4 + i) for i in range(6)]
    samples = []
    for i, n in enumerate(nests):
        prof = rng.random(N_PROFILE) * (i + 1)
        samples.append(Sample(f"s{i}", encode_static(n), prof, np.full(N_TARGETS, float(i)) + rng.random(20) * 0.1))
    ds = {"train": samples[::2] + samples[1::4], "val": samples[1::2]}
    a = train(ds, TrainConfig(epochs=20), TINY)
    b = train(ds, TrainConfig(epochs=20), TINY)
    assert a.history == b.history
    assert a.history[-1]["val_loss"] < a.history[0]["val_loss"]


def test_defaults_follow_protocol():
    cfg = TrainConfig()
    assert cfg.epochs == 20 and cfg.lr == 1e-3


def test_empty_split():
    rng = np.random.default_rng(0)
    with pytest.raises(ModelError, match="empty split"):
        train({"train": [_sample(0, copy_nest(), rng)], "val": []}, TrainConfig(epochs=1), TINY)


@pytest.fixture
def trained(tmp_path):
    rng = np.random.default_rng(0)
    s = [_sample(i, n, rng) for i, n in enumerate([copy_nest(), matmul_nest(4), matmul_nest(6)])]
    return train({"train": s, "val": s[:1]}, TrainConfig(epochs=2), TINY), s


def test_save_load_bitwise(trained, tmp_path):
    m, s = trained
    path = tmp_path / "m.npz"
    save_model(m, path)
    m2 = load_model(path)
    for smp in s:
        a, b = m.embed(smp.graph, smp.profile), m2.embed(smp.graph, smp.profile)
        assert np.array_equal(a["nest_embedding"], b["nest_embedding"])
        assert np.array_equal(a["prediction"], b["prediction"])
    assert m.fingerprint() == m2.fingerprint()
    assert m2.history == m.history


def test_truncated_file(trained, tmp_path):
    path = tmp_path / "m.npz"
    save_model(trained[0], path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ModelFileError, match="corrupt"):
        load_model(path)


def test_layout_version_error(trained, tmp_path, monkeypatch):
    path = tmp_path / "m.npz"
    save_model(trained[0], path)
    import perfembed.model.training as tr
    monkeypatch.setattr(tr, "feature_layout", lambda: {"version": "different"})
    with pytest.raises(LayoutVersionError):
        load_model(path)
    assert load_model(path, check_layout=False).layout_version == trained[0].layout_version
