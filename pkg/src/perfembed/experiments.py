"""Evaluation experiments shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
import math

import numpy as np

from .corpus import CorpusEntry
from .corpus import KernelSpec, generate_kernel
from .encoder import encode_static
from .model import Sample, TrainedModel
from .similarity import EmbeddingIndex, data_locality, performance_similarity, reuse_distance_features
from .simprof import DESK_MACHINE, TARGETS, MachineConfig
from .transform import SCHEDULE_ONLY, SpaceLimits, apply_sequence
from .tuning import (Database, brute_force_tune, build_database, cost_of, db_add, db_query, embed_nest, make_entry,
                     match_transformation, transfer_tune)

log = logging.getLogger(__name__)

# a wider space for the matmul family, used by the search-reduction experiment
MATMUL_LIMITS = SpaceLimits(tile_sizes=(4, 8, 16), vector_widths=(1, 2, 4, 8), chunk_sizes=(4, 16),
                            parallel_threads=(2, 4), max_length=4)
MATMUL_KINDS = ("matmul", "minplus_matmul")
SIMILARITY_METRICS = ("mem_bandwidth", "l3_bandwidth", "l2_bandwidth", "data_locality")


def samples(entries: list[CorpusEntry]) -> dict:
    """Encode labeled entries into ``{split: [Sample]}``."""
    out: dict = {}
    for e in entries:
        if e.profile is None or e.targets is None:
            raise ValueError(f"entry {e.id} is not labeled")
        out.setdefault(e.split, []).append(Sample(e.id, encode_static(e.nest), e.profile, e.targets))
    return out


def pearson(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.std() == 0 or b.std() == 0:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])


def prediction_correlations(model: TrainedModel, test: list[Sample]) -> dict:
    """Pearson correlation per target between predictions and truth (original units)."""
    _, pred = model.embed_many([s.graph for s in test], [s.profile for s in test])
    Y = np.stack([s.targets for s in test])
    return {name: pearson(pred[:, j], Y[:, j]) for j, name in enumerate(TARGETS)}


def similarity_metrics(entries: list[CorpusEntry], machine: MachineConfig) -> dict:
    """Per-id values of the four similarity metrics (targets + cold data locality)."""
    ix = {n: i for i, n in enumerate(TARGETS)}
    out = {m: {} for m in SIMILARITY_METRICS}
    for e in entries:
        t = e.targets
        out["mem_bandwidth"][e.id] = t[ix["mem_read_bw"]] + t[ix["mem_write_bw"]]
        out["l3_bandwidth"][e.id] = t[ix["l3_load_bw"]] + t[ix["l3_evict_bw"]]
        out["l2_bandwidth"][e.id] = t[ix["l2_load_bw"]] + t[ix["l2_evict_bw"]]
        out["data_locality"][e.id] = data_locality(e.nest, e.inputs, machine)
    return out


def similarity_report(model: TrainedModel, entries: list[CorpusEntry], machine: MachineConfig | None = None,
                      k: int = 3) -> dict:
    """Mean k-NN CoV per metric for the model embeddings and the baseline.

    Returns ``{"rows": [...], "ids": [...], "embeddings": array}``; each row
    holds metric, both mean CoVs and the excluded-neighbourhood counts.
    """
    machine = machine or DESK_MACHINE
    ids = [e.id for e in entries]
    E, _ = model.embed_many([encode_static(e.nest) for e in entries], [e.profile for e in entries])
    B = np.stack([reuse_distance_features(e.nest, e.inputs, machine).as_array() for e in entries])
    values = similarity_metrics(entries, machine)
    mi, bi = EmbeddingIndex(ids, E), EmbeddingIndex(ids, B)
    rows = []
    for metric in SIMILARITY_METRICS:
        a = performance_similarity(mi, values[metric], k)
        b = performance_similarity(bi, values[metric], k)
        rows.append({"metric": metric, "model_cov": a.mean_cov, "baseline_cov": b.mean_cov,
                     "model_excluded": len(a.excluded), "baseline_excluded": len(b.excluded)})
    return {"rows": rows, "ids": ids, "embeddings": E}


def transfer_experiment(entries: list[CorpusEntry], model: TrainedModel, machine: MachineConfig | None = None,
                        limits: SpaceLimits | None = None, k: int = 5, tolerance: float = 0.10):
    """Brute-force every entry, store improvements, then leave-one-out
    transfer tuning of every entry against the others.

    Returns ``(database, rows)``; one row per entry.
    """
    machine = machine or DESK_MACHINE
    db, bf = build_database([(e.id, e.nest, e.inputs) for e in entries], model, machine, limits)
    rows = []
    for e in entries:
        rep = transfer_tune(e.nest, e.inputs, db, model, machine, k, target_id=e.id)
        b = bf[e.id]
        rows.append({
            "id": e.id, "kind": e.kind, "space_size": b.space_size, "baseline_cost": b.baseline_cost,
            "bruteforce_cost": b.best_cost, "transfer_cost": rep.best_cost, "evaluations": rep.evaluations,
            "within_tolerance": rep.best_cost <= (1 + tolerance) * b.best_cost,
            "regression": rep.best_cost > rep.baseline_cost,
            "bruteforce_sequence": " ; ".join(t.to_text() for t in b.sequence),
            "transfer_sequence": " ; ".join(t.to_text() for t in rep.sequence),
        })
    return db, rows


def search_reduction(entries: list[CorpusEntry], model: TrainedModel, machine: MachineConfig | None = None,
                     limits: SpaceLimits = MATMUL_LIMITS, k: int = 5):
    """Space size over transfer evaluations for the matmul family (leave-one-out)."""
    fam = [e for e in entries if e.kind in MATMUL_KINDS]
    if len(fam) < 2:
        raise ValueError("need at least two matmul-family nests")
    _, rows = transfer_experiment(fam, model, machine, limits, k)
    for r in rows:
        r["ratio"] = r["space_size"] / r["evaluations"]
    return rows


# ---------------------------------------------------------------------------
# SpMM schedule decision
# ---------------------------------------------------------------------------


def spmm_instances(n_uniform: int, n_powerlaw: int, seed: int = 0, rows=(192, 384), degree=(4, 12),
                   K: int = 16, powerlaw=(10, 20), threads: int = 4):
    """Seeded synthetic SpMM nests: ``[(id, nest, inputs, "uniform" | "powerlaw")]``.

    ``powerlaw`` bounds the row-length exponent in tenths, as in the corpus.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k, label in enumerate(["uniform"] * n_uniform + ["powerlaw"] * n_powerlaw):
        r = int(rng.integers(rows[0], rows[1] + 1))
        sizes = {"rows": r, "cols": r, "nnz": r * int(rng.integers(degree[0], degree[1] + 1)), "K": K,
                 "variant": 1, "powerlaw": 0 if label == "uniform" else int(rng.integers(powerlaw[0], powerlaw[1] + 1))}
        nest, inputs = generate_kernel(KernelSpec("csr_spmm", sizes, int(rng.integers(1 << 31))), threads)
        out.append((f"spmm-{k:02d}-{label}", nest, inputs, label))
    return out


def spmm_experiment(model: TrainedModel, train, test, machine: MachineConfig | None = None,
                    limits: SpaceLimits = SCHEDULE_ONLY) -> list[dict]:
    """For each test instance the schedule of its 1-NN training instance is
    instantiated (no simulation) and compared with the simulated optimum.

    Training instances are stored with their optimal schedule, including the
    empty sequence when the static default already wins. The default machine
    keeps the matrices cache-resident so the decision is about load balance;
    on the desk machine shared-L3 effects make uniform instances a coin flip.
    """
    machine = machine or MachineConfig()
    db = Database(model.fingerprint(), model.config.embed_dim)
    for tid, nest, inputs, _ in train:
        res = brute_force_tune(nest, inputs, machine, limits)
        db_add(db, make_entry(tid, nest, inputs, res.sequence, model, machine, res.baseline_cost, res.best_cost))
    rows = []
    for tid, nest, inputs, label in test:
        opt = brute_force_tune(nest, inputs, machine, limits)
        emb = embed_nest(model, nest, inputs, machine)
        (nbr, dist), = db_query(db, emb.nest_embedding, 1)
        chosen = []
        for step in nbr.steps:
            t = match_transformation(step, nest, emb.graph, emb.node_embeddings)
            if t:
                chosen.append(t)
        _, cost = cost_of(apply_sequence(chosen, nest), inputs, machine)
        rows.append({"id": tid, "label": label, "neighbor": nbr.id, "distance": dist,
                     "chosen": " ; ".join(t.to_text() for t in chosen) or "static",
                     "optimal": " ; ".join(t.to_text() for t in opt.sequence) or "static",
                     "chosen_cost": cost, "optimal_cost": opt.best_cost, "correct": cost <= opt.best_cost})
    return rows
