"""Embedding network with hand-written backpropagation.

Layer plan (all float64):

* input projection  ``h0 = relu(x W_in + b_in)``
* ``gnn_layers`` graph-transformer layers. Messages flow along every encoded
  edge in both directions plus a self loop, each with a learned edge-type
  embedding added to keys and values; per-head scaled dot-product scores
  are normalised by a softmax over each destination's incoming messages;
  ``h' = LayerNorm(h + relu(attn Wo + bo))``
* gated pooling     ``g = sum_v sigmoid(h_v w_g + b_g) * tanh(h_v W_p + b_p)``
* dynamic embedding ``z = p W_dyn + b_dyn`` (p = normalised 95-profile)
* fusion MLP        ``e = relu([g, z] W_f1 + b_f1) W_f2 + b_f2`` (nest embedding)
* target head       ``y = e W_out + b_out`` (20 normalised targets)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from ..encoder import NODE_KINDS, EncodedGraph, feature_layout

N_PROFILE = 95
N_TARGETS = 20
N_EDGE_TYPES = 3  # forward, backward, self
LN_EPS = 1e-5


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    gnn_layers: int = 3
    attention_heads: int = 4
    mlp_hidden: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim < 1 or self.attention_heads < 1 or self.embed_dim % self.attention_heads:
            raise ModelError("embed_dim must be a positive multiple of attention_heads")
        if self.gnn_layers < 0 or self.mlp_hidden < 1:
            raise ModelError("gnn_layers must be >= 0 and mlp_hidden >= 1")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.attention_heads

    def to_dict(self) -> dict:
        return asdict(self)


def input_width() -> int:
    return len(NODE_KINDS) + feature_layout()["width"]


def param_shapes(cfg: ModelConfig) -> dict:
    d, hdn = cfg.embed_dim, cfg.mlp_hidden
    shapes = {"W_in": (input_width(), d), "b_in": (d,)}
    for l in range(cfg.gnn_layers):
        shapes.update({
            f"L{l}.Wq": (d, d), f"L{l}.Wk": (d, d), f"L{l}.Wv": (d, d), f"L{l}.E": (N_EDGE_TYPES, d),
            f"L{l}.Wo": (d, d), f"L{l}.bo": (d,), f"L{l}.gamma": (d,), f"L{l}.beta": (d,),
        })
    shapes.update({
        "w_gate": (d, 1), "b_gate": (1,), "W_pool": (d, d), "b_pool": (d,),
        "W_dyn": (N_PROFILE, d), "b_dyn": (d,),
        "W_f1": (2 * d, hdn), "b_f1": (hdn,), "W_f2": (hdn, d), "b_f2": (d,),
        "W_out": (d, N_TARGETS), "b_out": (N_TARGETS,),
    })
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict
    layout_version: str

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()}, self.layout_version)

    def count(self) -> int:
        return int(sum(v.size for v in self.weights.values()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.config, {k: np.zeros_like(v) for k, v in self.weights.items()}, self.layout_version)


def init_model(config: ModelConfig) -> ModelParams:
    """Xavier-uniform weights, zero biases (LayerNorm gains start at one)."""
    rng = np.random.default_rng(config.seed)
    weights = {}
    for name, shape in param_shapes(config).items():
        base = name.split(".")[-1]
        if base == "gamma":
            weights[name] = np.ones(shape)
        elif len(shape) == 1:
            weights[name] = np.zeros(shape)
        else:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            weights[name] = rng.uniform(-a, a, size=shape)
    return ModelParams(config, weights, feature_layout()["version"])


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    x: np.ndarray          # (N, F)
    src: np.ndarray        # (M,) message sources
    dst: np.ndarray        # (M,)
    etype: np.ndarray      # (M,)
    graph_of: np.ndarray   # (N,)
    profiles: np.ndarray   # (G, 95)
    offsets: np.ndarray    # (G + 1,) node offsets per graph
    agg: sp.csr_matrix     # (N, M): sums messages into destinations
    pool: sp.csr_matrix    # (G, N): sums nodes into graphs

    @property
    def num_graphs(self) -> int:
        return len(self.offsets) - 1


def make_batch(graphs, profiles, layout_version: str | None = None) -> Batch:
    xs, srcs, dsts, types, gids, offs = [], [], [], [], [], [0]
    for g_idx, g in enumerate(graphs):
        if layout_version is not None and g.layout_version != layout_version:
            raise ModelError(f"feature layout mismatch: graph {g.layout_version}, model {layout_version}")
        n = g.num_nodes
        base = offs[-1]
        xs.append(g.features)
        e = np.asarray(g.edges, dtype=np.int64).reshape(-1, 2) + base
        self_idx = np.arange(base, base + n)
        srcs += [e[:, 0], e[:, 1], self_idx]
        dsts += [e[:, 1], e[:, 0], self_idx]
        types += [np.zeros(len(e), np.int64), np.ones(len(e), np.int64), np.full(n, 2, np.int64)]
        gids.append(np.full(n, g_idx, np.int64))
        offs.append(base + n)
    x = np.concatenate(xs) if xs else np.zeros((0, input_width()))
    src, dst, etype = np.concatenate(srcs), np.concatenate(dsts), np.concatenate(types)
    N, M, G = len(x), len(src), len(graphs)
    graph_of = np.concatenate(gids) if gids else np.zeros(0, np.int64)
    agg = sp.csr_matrix((np.ones(M), (dst, np.arange(M))), shape=(N, M))
    pool = sp.csr_matrix((np.ones(N), (graph_of, np.arange(N))), shape=(G, N))
    P = np.asarray(profiles, dtype=np.float64).reshape(G, -1)
    if P.shape[1] != N_PROFILE:
        raise ModelError(f"profile must have {N_PROFILE} features")
    return Batch(x, src, dst, etype, graph_of, P, np.array(offs), agg, pool)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _segment_softmax(s, dst, N):
    # s: (M, H); subtract per-destination max for stability
    mx = np.full((N, s.shape[1]), -np.inf)
    np.maximum.at(mx, dst, s)
    ex = np.exp(s - mx[dst])
    den = np.zeros((N, s.shape[1]))
    np.add.at(den, dst, ex)
    return ex / den[dst]


def forward_batch(params: ModelParams, batch: Batch, keep: bool = False):
    """Returns ``(node_embeddings, nest_embeddings, predictions, cache)``."""
    W = params.weights
    cfg = params.config
    H_, dh = cfg.attention_heads, cfg.head_dim
    N, M = len(batch.x), len(batch.src)
    cache: dict = {}
    pre = batch.x @ W["W_in"] + W["b_in"]
    h = _relu(pre)
    cache["in"] = (pre,)
    scale = 1.0 / np.sqrt(dh)
    for l in range(cfg.gnn_layers):
        p = f"L{l}."
        Q = (h @ W[p + "Wq"]).reshape(N, H_, dh)
        K = (h @ W[p + "Wk"]).reshape(N, H_, dh)
        V = (h @ W[p + "Wv"]).reshape(N, H_, dh)
        Ee = W[p + "E"][batch.etype].reshape(M, H_, dh)
        Kj = K[batch.src] + Ee
        Vj = V[batch.src] + Ee
        Qi = Q[batch.dst]
        s = (Qi * Kj).sum(-1) * scale
        alpha = _segment_softmax(s, batch.dst, N)
        msg = (alpha[..., None] * Vj).reshape(M, -1)
        A = batch.agg @ msg
        O = A @ W[p + "Wo"] + W[p + "bo"]
        R = _relu(O)
        Z = h + R
        mu = Z.mean(1, keepdims=True)
        var = Z.var(1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        Zn = (Z - mu) * inv
        h_new = Zn * W[p + "gamma"] + W[p + "beta"]
        if keep:
            cache[p] = (h, Qi, Kj, Vj, alpha, A, O, Zn, inv)
        h = h_new
    gate_pre = h @ W["w_gate"] + W["b_gate"]
    gate = _sigmoid(gate_pre)
    T = np.tanh(h @ W["W_pool"] + W["b_pool"])
    g = batch.pool @ (gate * T)
    z = batch.profiles @ W["W_dyn"] + W["b_dyn"]
    c = np.concatenate([g, z], axis=1)
    u_pre = c @ W["W_f1"] + W["b_f1"]
    u = _relu(u_pre)
    e = u @ W["W_f2"] + W["b_f2"]
    y = e @ W["W_out"] + W["b_out"]
    if keep:
        cache["head"] = (h, gate, T, c, u_pre, u, e)
    return h, e, y, cache


def backward_batch(params: ModelParams, batch: Batch, cache: dict, dy: np.ndarray) -> dict:
    """Gradients of ``sum(dy * y)`` w.r.t. every weight."""
    W = params.weights
    cfg = params.config
    H_, dh = cfg.attention_heads, cfg.head_dim
    N, M = len(batch.x), len(batch.src)
    grads = {}
    h, gate, T, c, u_pre, u, e = cache["head"]
    grads["W_out"] = e.T @ dy
    grads["b_out"] = dy.sum(0)
    de = dy @ W["W_out"].T
    grads["W_f2"] = u.T @ de
    grads["b_f2"] = de.sum(0)
    du = (de @ W["W_f2"].T) * (u_pre > 0)
    grads["W_f1"] = c.T @ du
    grads["b_f1"] = du.sum(0)
    dc = du @ W["W_f1"].T
    d = cfg.embed_dim
    dg, dz = dc[:, :d], dc[:, d:]
    grads["W_dyn"] = batch.profiles.T @ dz
    grads["b_dyn"] = dz.sum(0)
    dnode = batch.pool.T @ dg                    # (N, d): grad of gate*T
    dT = dnode * gate
    dgate = (dnode * T).sum(1, keepdims=True)
    dgate_pre = dgate * gate * (1.0 - gate)
    dT_pre = dT * (1.0 - T * T)
    grads["w_gate"] = h.T @ dgate_pre
    grads["b_gate"] = dgate_pre.sum(0)
    grads["W_pool"] = h.T @ dT_pre
    grads["b_pool"] = dT_pre.sum(0)
    dh_ = dgate_pre @ W["w_gate"].T + dT_pre @ W["W_pool"].T
    scale = 1.0 / np.sqrt(dh)
    for l in reversed(range(cfg.gnn_layers)):
        p = f"L{l}."
        h_in, Qi, Kj, Vj, alpha, A, O, Zn, inv = cache[p]
        grads[p + "gamma"] = (dh_ * Zn).sum(0)
        grads[p + "beta"] = dh_.sum(0)
        dZn = dh_ * W[p + "gamma"]
        dZ = inv * (dZn - dZn.mean(1, keepdims=True) - Zn * (dZn * Zn).mean(1, keepdims=True))
        dR = dZ
        dO = dR * (O > 0)
        grads[p + "Wo"] = A.T @ dO
        grads[p + "bo"] = dO.sum(0)
        dA = dO @ W[p + "Wo"].T
        dmsg = (batch.agg.T @ dA).reshape(M, H_, dh)
        dalpha = (dmsg * Vj).sum(-1)
        dVj = dmsg * alpha[..., None]
        tot = np.zeros((N, H_))
        np.add.at(tot, batch.dst, dalpha * alpha)
        ds = alpha * (dalpha - tot[batch.dst])
        dQi = ds[..., None] * Kj * scale
        dKj = ds[..., None] * Qi * scale
        dQ = np.zeros((N, H_, dh))
        np.add.at(dQ, batch.dst, dQi)
        dK = np.zeros((N, H_, dh))
        np.add.at(dK, batch.src, dKj)
        dV = np.zeros((N, H_, dh))
        np.add.at(dV, batch.src, dVj)
        dE = np.zeros((N_EDGE_TYPES, H_ * dh))
        np.add.at(dE, batch.etype, (dKj + dVj).reshape(M, -1))
        grads[p + "E"] = dE
        dQ, dK, dV = dQ.reshape(N, -1), dK.reshape(N, -1), dV.reshape(N, -1)
        grads[p + "Wq"] = h_in.T @ dQ
        grads[p + "Wk"] = h_in.T @ dK
        grads[p + "Wv"] = h_in.T @ dV
        dh_ = dZ + dQ @ W[p + "Wq"].T + dK @ W[p + "Wk"].T + dV @ W[p + "Wv"].T
    (pre,) = cache["in"]
    dpre = dh_ * (pre > 0)
    grads["W_in"] = batch.x.T @ dpre
    grads["b_in"] = dpre.sum(0)
    return grads


def forward(params: ModelParams, graph: EncodedGraph, profile) -> dict:
    """Single-nest forward pass; ``profile`` is the normalised 95-vector."""
    batch = make_batch([graph], [profile], params.layout_version)
    h, e, y, _ = forward_batch(params, batch)
    return {"node_embeddings": h, "nest_embedding": e[0], "prediction": y[0]}


def mae_loss(prediction, target) -> float:
    prediction, target = np.asarray(prediction, float), np.asarray(target, float)
    if prediction.shape != target.shape:
        raise ModelError(f"length mismatch: {prediction.shape} vs {target.shape}")
    return float(np.abs(prediction - target).mean())


def loss_and_grads(params: ModelParams, batch: Batch, targets: np.ndarray):
    """MAE over all graphs and targets of the batch, with gradients."""
    _, _, y, cache = forward_batch(params, batch, keep=True)
    if y.shape != targets.shape:
        raise ModelError(f"length mismatch: {y.shape} vs {targets.shape}")
    diff = y - targets
    loss = float(np.abs(diff).mean())
    dy = np.sign(diff) / diff.size
    return loss, backward_batch(params, batch, cache, dy)
