"""Training loop, normalization statistics and the model file format.

Model file: an ``.npz`` archive holding one array per weight plus ``__meta__``,
a JSON string with keys ``format`` ("perfembed-model v1"), ``config``,
``layout_version``, ``history`` and the four normalization vectors
(``profile_mean``/``profile_std`` over log1p profiles, ``target_mean``/
``target_std`` over raw targets).
"""
from __future__ import annotations

import hashlib
import json
import logging
import zipfile
from dataclasses import dataclass, field

import numpy as np

from ..encoder import EncodedGraph, feature_layout
from .network import (N_PROFILE, N_TARGETS, ModelConfig, ModelError, ModelParams, forward, forward_batch,
                      init_model, loss_and_grads, make_batch)

log = logging.getLogger(__name__)

MODEL_FORMAT = "perfembed-model v1"


class ModelFileError(ModelError):
    pass


class LayoutVersionError(ModelError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if not self.lr > 0:
            raise ModelError("learning rate must be positive")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")


@dataclass
class Sample:
    id: str
    graph: EncodedGraph
    profile: np.ndarray   # raw 95-vector
    targets: np.ndarray   # raw 20-vector


@dataclass
class TrainedModel:
    params: ModelParams
    profile_mean: np.ndarray
    profile_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray
    history: list = field(default_factory=list)

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    @property
    def layout_version(self) -> str:
        return self.params.layout_version

    def normalize_profile(self, profile) -> np.ndarray:
        p = np.asarray(profile, dtype=np.float64)
        if p.shape[-1] != N_PROFILE:
            raise ModelError(f"profile must have {N_PROFILE} features")
        return (np.log1p(np.maximum(p, 0.0)) - self.profile_mean) / self.profile_std

    def normalize_targets(self, targets) -> np.ndarray:
        return (np.asarray(targets, dtype=np.float64) - self.target_mean) / self.target_std

    def embed(self, graph: EncodedGraph, profile) -> dict:
        """Forward pass on a raw profile; ``prediction`` is in original units."""
        out = forward(self.params, graph, self.normalize_profile(profile))
        out["prediction"] = out["prediction"] * self.target_std + self.target_mean
        return out

    def embed_many(self, graphs, profiles, batch_size: int = 32):
        """Nest embeddings ``(n, d)`` and original-unit predictions ``(n, 20)``."""
        embs, preds = [], []
        for s in range(0, len(graphs), batch_size):
            b = make_batch(graphs[s:s + batch_size], self.normalize_profile(np.asarray(profiles[s:s + batch_size])),
                           self.layout_version)
            _, e, y, _ = forward_batch(self.params, b)
            embs.append(e)
            preds.append(y * self.target_std + self.target_mean)
        d = self.config.embed_dim
        if not embs:
            return np.zeros((0, d)), np.zeros((0, N_TARGETS))
        return np.concatenate(embs), np.concatenate(preds)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self._meta(include_history=False), sort_keys=True).encode())
        for k in sorted(self.params.weights):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params.weights[k]).tobytes())
        return h.hexdigest()[:16]

    def _meta(self, include_history: bool = True) -> dict:
        meta = {
            "format": MODEL_FORMAT,
            "config": self.config.to_dict(),
            "layout_version": self.layout_version,
            "profile_mean": self.profile_mean.tolist(),
            "profile_std": self.profile_std.tolist(),
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
        }
        if include_history:
            meta["history"] = self.history
        return meta


def _stats(x: np.ndarray):
    mean = x.mean(0)
    std = x.std(0)
    return mean, np.where(std > 0, std, 1.0)


def _check(samples, name):
    if not samples:
        raise ModelError(f"empty split: {name}")


def _mean_loss(model: TrainedModel, samples, batch_size=32) -> float:
    tot = 0.0
    for s in range(0, len(samples), batch_size):
        chunk = samples[s:s + batch_size]
        b = make_batch([c.graph for c in chunk], model.normalize_profile(np.stack([c.profile for c in chunk])),
                       model.layout_version)
        _, _, y, _ = forward_batch(model.params, b)
        t = model.normalize_targets(np.stack([c.targets for c in chunk]))
        tot += np.abs(y - t).mean(1).sum()
    return float(tot / len(samples))


def train(dataset: dict, config: TrainConfig | None = None, model_config: ModelConfig | None = None) -> TrainedModel:
    """Adam on the MAE of z-scored targets.

    ``dataset`` maps split name to a list of :class:`Sample`; ``train`` and
    ``val`` are required. Returns the trained model; ``history`` holds one
    ``{"epoch", "train_loss", "val_loss"}`` record per epoch (epoch 0 is the
    untrained model).
    """
    config = config or TrainConfig()
    model_config = model_config or ModelConfig()
    tr, va = list(dataset.get("train", [])), list(dataset.get("val", []))
    _check(tr, "train")
    _check(va, "val")
    P = np.log1p(np.maximum(np.stack([s.profile for s in tr]), 0.0))
    Y = np.stack([s.targets for s in tr]).astype(np.float64)
    if P.shape[1] != N_PROFILE or Y.shape[1] != N_TARGETS:
        raise ModelError("samples need 95 profile features and 20 targets")
    pm, ps = _stats(P)
    tm, ts = _stats(Y)
    model = TrainedModel(init_model(model_config), pm, ps, tm, ts)
    W = model.params.weights
    layout = model.layout_version
    # batches are built once; only their order changes per epoch
    bs = config.batch_size
    rng = np.random.default_rng(config.seed)
    m = {k: np.zeros_like(v) for k, v in W.items()}
    v2 = {k: np.zeros_like(v) for k, v in W.items()}
    step = 0
    norm_p = model.normalize_profile(np.stack([s.profile for s in tr]))
    norm_t = model.normalize_targets(Y)
    model.history.append({"epoch": 0, "train_loss": _mean_loss(model, tr), "val_loss": _mean_loss(model, va)})
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(tr))
        for s in range(0, len(order), bs):
            idx = order[s:s + bs]
            batch = make_batch([tr[i].graph for i in idx], norm_p[idx], layout)
            _, grads = loss_and_grads(model.params, batch, norm_t[idx])
            step += 1
            c1 = 1.0 - config.beta1 ** step
            c2 = 1.0 - config.beta2 ** step
            for k, g in grads.items():
                m[k] = config.beta1 * m[k] + (1 - config.beta1) * g
                v2[k] = config.beta2 * v2[k] + (1 - config.beta2) * g * g
                W[k] -= config.lr * (m[k] / c1) / (np.sqrt(v2[k] / c2) + config.eps)
        rec = {"epoch": epoch, "train_loss": _mean_loss(model, tr), "val_loss": _mean_loss(model, va)}
        model.history.append(rec)
        log.info("epoch %d train %.4f val %.4f", epoch, rec["train_loss"], rec["val_loss"])
    return model


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_model(model: TrainedModel, path) -> None:
    arrays = {f"w:{k}": v for k, v in model.params.weights.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(model._meta(), sort_keys=True)), **arrays)


def load_model(path, check_layout: bool = True) -> TrainedModel:
    """Read a model file. With ``check_layout`` the stored feature-layout
    version must equal the current encoder's."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            weights = {k[2:]: z[k].copy() for k in z.files if k.startswith("w:")}
    except (zipfile.BadZipFile, OSError, ValueError, KeyError, EOFError) as exc:
        raise ModelFileError(f"corrupt model file {path}: {exc}") from exc
    if meta.get("format") != MODEL_FORMAT:
        raise ModelFileError(f"unsupported model format {meta.get('format')!r} in {path}")
    cfg = ModelConfig(**meta["config"])
    expected = set(init_model(cfg).weights)
    if set(weights) != expected:
        raise ModelFileError(f"corrupt model file {path}: parameter set does not match config")
    current = feature_layout()["version"]
    if check_layout and meta["layout_version"] != current:
        raise LayoutVersionError(
            f"model {path} was trained with feature layout {meta['layout_version']}, encoder is {current}")
    params = ModelParams(cfg, weights, meta["layout_version"])
    return TrainedModel(params, np.array(meta["profile_mean"]), np.array(meta["profile_std"]),
                        np.array(meta["target_mean"]), np.array(meta["target_std"]), meta.get("history", []))
