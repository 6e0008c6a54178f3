"""Optimization database, assignment solver, transfer tuning and the
brute-force oracle tuner.

Database file: ``.npz`` with ``__meta__`` (JSON: ``format``, ``fingerprint``,
``embed_dim`` and per-entry ``id``, ``nest`` text, ``sequence`` steps with
their subgraph node ids, ``encoded_graph``, costs) and arrays
``{i}:nest``, ``{i}:nodes``, ``{i}:step{j}`` holding the embeddings.
"""
from __future__ import annotations

import json
import logging
import math
import zipfile
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .encoder import EncodedGraph, encode_static
from .ir import LoopNest, parse_loopnest, serialize
from .model import TrainedModel
from .similarity import EmbeddingIndex, knn
from .simprof import DESK_MACHINE, InputBindings, MachineConfig, SimulationError, measure_full
from .transform import (SpaceLimits, Transformation, TransformError, applicable, apply, enumerate_space,
                        induced_subgraph, parse_transformation)

log = logging.getLogger(__name__)

DB_FORMAT = "perfembed-db v1"


class DatabaseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Assignment:
    mapping: dict      # source row -> target column
    total_cost: float


def _solve(C: np.ndarray):
    """Optimal cost of assigning every row of ``C``, or ``None`` if infeasible."""
    if C.shape[0] == 0:
        return 0.0
    try:
        r, c = linear_sum_assignment(C)
    except ValueError:
        return None
    total = C[r, c].sum()
    return None if not np.isfinite(total) else float(total)


def hungarian(cost) -> Assignment | None:
    """Minimum-cost injective assignment of all rows to columns (n <= m).

    Entries may be ``+inf`` (forbidden pairs); returns ``None`` when no
    finite assignment exists. Among optimal assignments the lexicographically
    smallest (by column of row 0, then row 1, ...) is returned.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] < 1:
        raise ValueError("cost must be a non-empty 2-D matrix")
    n, m = C.shape
    if n > m:
        raise ValueError("more sources than targets")
    if np.isnan(C).any() or (C < 0).any():
        raise ValueError("costs must be >= 0 or +inf")
    best = _solve(C)
    if best is None:
        return None
    tol = 1e-9 * max(1.0, abs(best))
    rows = list(range(n))
    free = list(range(m))
    mapping: dict[int, int] = {}
    budget = best
    for i in rows:
        rest = [r for r in rows if r > i]
        for j in free:
            if not np.isfinite(C[i, j]):
                continue
            cols = [c for c in free if c != j]
            sub = _solve(C[np.ix_(rest, cols)]) if rest else 0.0
            if sub is not None and C[i, j] + sub <= budget + tol:
                mapping[i] = j
                budget -= C[i, j]
                free = cols
                break
        else:  # pragma: no cover - numerical safety net
            return None
    total = 0.0
    for i in rows:
        total += C[i, mapping[i]]
    return Assignment(mapping, float(total))


# ---------------------------------------------------------------------------
# database
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    transformation: Transformation
    node_ids: list           # induced subgraph, anchors first
    kinds: list              # encoded node kind per node id
    embeddings: np.ndarray   # (len(node_ids), d)


@dataclass
class DbEntry:
    id: str
    nest_embedding: np.ndarray
    node_embeddings: np.ndarray
    encoded_graph: EncodedGraph
    nest: str
    steps: list
    baseline_cost: float
    optimized_cost: float

    @property
    def sequence(self) -> list:
        return [s.transformation for s in self.steps]


@dataclass
class Database:
    fingerprint: str
    embed_dim: int
    entries: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, entry_id: str) -> DbEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def index(self) -> EmbeddingIndex:
        return EmbeddingIndex([e.id for e in self.entries], np.stack([e.nest_embedding for e in self.entries]))


def db_add(db: Database, entry: DbEntry) -> None:
    if entry.optimized_cost > entry.baseline_cost:
        raise DatabaseError(f"entry {entry.id}: optimized cost exceeds baseline")
    if any(e.id == entry.id for e in db.entries):
        raise DatabaseError(f"duplicate id {entry.id!r}")
    if entry.nest_embedding.shape != (db.embed_dim,):
        raise DatabaseError(f"entry {entry.id}: embedding dimension {entry.nest_embedding.shape} != {db.embed_dim}")
    db.entries.append(entry)


def db_query(db: Database, embedding, k: int, exclude: str | None = None) -> list[tuple[DbEntry, float]]:
    if not db.entries:
        raise DatabaseError("empty database")
    by_id = {e.id: e for e in db.entries}
    return [(by_id[i], d) for i, d in knn(db.index(), embedding, k, exclude)]


def db_save(db: Database, path) -> None:
    arrays, metas = {}, []
    for i, e in enumerate(db.entries):
        arrays[f"{i}:nest"] = e.nest_embedding
        arrays[f"{i}:nodes"] = e.node_embeddings
        steps = []
        for j, s in enumerate(e.steps):
            arrays[f"{i}:step{j}"] = s.embeddings
            steps.append({"t": s.transformation.to_text(), "node_ids": list(s.node_ids), "kinds": list(s.kinds)})
        metas.append({"id": e.id, "nest": e.nest, "steps": steps, "graph": e.encoded_graph.to_dict(),
                      "baseline_cost": e.baseline_cost, "optimized_cost": e.optimized_cost})
    meta = {"format": DB_FORMAT, "fingerprint": db.fingerprint, "embed_dim": db.embed_dim, "entries": metas}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def db_load(path, fingerprint: str | None = None) -> Database:
    """Read a database; with ``fingerprint`` the stored model fingerprint must match."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            arrays = {k: z[k].copy() for k in z.files if k != "__meta__"}
    except (zipfile.BadZipFile, OSError, ValueError, KeyError, EOFError) as exc:
        raise DatabaseError(f"corrupt database file {path}: {exc}") from exc
    if meta.get("format") != DB_FORMAT:
        raise DatabaseError(f"unsupported database format {meta.get('format')!r} in {path}")
    if fingerprint is not None and meta["fingerprint"] != fingerprint:
        raise DatabaseError(f"database {path} was built with model {meta['fingerprint']}, not {fingerprint}")
    db = Database(meta["fingerprint"], int(meta["embed_dim"]))
    try:
        for i, em in enumerate(meta["entries"]):
            steps = [StepRecord(parse_transformation(s["t"]), s["node_ids"], s["kinds"], arrays[f"{i}:step{j}"])
                     for j, s in enumerate(em["steps"])]
            db.entries.append(DbEntry(em["id"], arrays[f"{i}:nest"], arrays[f"{i}:nodes"],
                                      EncodedGraph.from_dict(em["graph"]), em["nest"], steps,
                                      em["baseline_cost"], em["optimized_cost"]))
    except (KeyError, TransformError) as exc:
        raise DatabaseError(f"corrupt database file {path}: {exc}") from exc
    return db


# ---------------------------------------------------------------------------
# embedding and costs
# ---------------------------------------------------------------------------


@dataclass
class Embedded:
    nest: LoopNest
    graph: EncodedGraph
    node_embeddings: np.ndarray
    nest_embedding: np.ndarray
    cost: float


def cost_of(nest: LoopNest, inputs: InputBindings, machine: MachineConfig):
    """``(profile, runtime cycles)`` of the measured (warm) pass."""
    profile, _, result = measure_full(nest, inputs, machine)
    return profile, float(result.runtime_cycles)


def embed_nest(model: TrainedModel, nest: LoopNest, inputs: InputBindings, machine: MachineConfig) -> Embedded:
    profile, cost = cost_of(nest, inputs, machine)
    graph = encode_static(nest)
    out = model.embed(graph, profile)
    return Embedded(nest, graph, out["node_embeddings"], out["nest_embedding"], cost)


def step_record(t: Transformation, emb: Embedded) -> StepRecord:
    ids = induced_subgraph(t, emb.nest)
    idx = [emb.graph.index_of(i) for i in ids]
    return StepRecord(t, ids, [emb.graph.nodes[i].kind for i in idx], emb.node_embeddings[idx].copy())


def make_entry(entry_id: str, nest: LoopNest, inputs: InputBindings, sequence, model: TrainedModel,
               machine: MachineConfig, baseline_cost: float | None = None,
               optimized_cost: float | None = None) -> DbEntry:
    """Replay ``sequence`` on ``nest``, recording each step's subgraph embeddings."""
    cur = embed_nest(model, nest, inputs, machine)
    first = cur
    steps = []
    for t in sequence:
        steps.append(step_record(t, cur))
        nxt = apply(t, cur.nest)
        cur = embed_nest(model, nxt, inputs, machine)
    return DbEntry(entry_id, first.nest_embedding, first.node_embeddings, first.graph, serialize(nest), steps,
                   first.cost if baseline_cost is None else baseline_cost,
                   cur.cost if optimized_cost is None else optimized_cost)


# ---------------------------------------------------------------------------
# matching and transfer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Skip:
    reason: str

    def __bool__(self) -> bool:
        return False


def match_transformation(step: StepRecord, target: LoopNest, target_graph: EncodedGraph,
                         target_node_embeddings) -> Transformation | Skip:
    """Instantiate ``step`` on ``target`` through a minimum-cost matching of the
    step's subgraph nodes onto target nodes of the same kind (cost: l2 distance)."""
    S = np.asarray(step.embeddings, dtype=np.float64)
    T = np.asarray(target_node_embeddings, dtype=np.float64)
    if S.ndim != 2 or T.ndim != 2 or S.shape[1] != T.shape[1]:
        raise ValueError("embedding dimensions of source and target differ")
    if len(S) > len(T):
        return Skip("infeasible")
    cost = np.sqrt(((S[:, None, :] - T[None, :, :]) ** 2).sum(-1))
    kinds = [n.kind for n in target_graph.nodes]
    for i, ks in enumerate(step.kinds):
        for j, kt in enumerate(kinds):
            if ks != kt:
                cost[i, j] = math.inf
    a = hungarian(cost)
    if a is None:
        return Skip("infeasible")
    t = step.transformation
    maps = []
    for r in range(len(t.anchors)):
        origin = target_graph.node_origin[a.mapping[r]]
        if not origin.startswith("entry:"):
            return Skip("anchor matched a non-map node")
        maps.append(origin[6:])
    try:
        inst = t.with_maps(maps)
    except TransformError as exc:
        return Skip(str(exc))
    ok = applicable(inst, target)
    if not ok:
        return Skip(ok.reason)
    return inst


@dataclass
class NeighborOutcome:
    id: str
    distance: float
    applied: list
    skipped: list            # (step text, reason)
    cost: float | None = None
    error: str | None = None


@dataclass
class TuneReport:
    target: str
    sequence: list
    baseline_cost: float
    best_cost: float
    evaluations: int
    profiles: int
    neighbors: list

    @property
    def speedup(self) -> float:
        return self.baseline_cost / self.best_cost if self.best_cost else math.inf

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "sequence": [t.to_text() for t in self.sequence],
            "baseline_cost": self.baseline_cost,
            "best_cost": self.best_cost,
            "evaluations": self.evaluations,
            "profiles": self.profiles,
            "neighbors": [{"id": n.id, "distance": n.distance, "applied": [t.to_text() for t in n.applied],
                           "skipped": [list(s) for s in n.skipped], "cost": n.cost, "error": n.error}
                          for n in self.neighbors],
        }


def transfer_tune(target: LoopNest, inputs: InputBindings, db: Database, model: TrainedModel,
                  machine: MachineConfig | None = None, k: int = 5, target_id: str | None = None) -> TuneReport:
    """Replay the sequences of the ``k`` nearest database entries on ``target``
    and keep the cheapest result; the unmodified nest is always a candidate.

    ``target_id`` is excluded from the neighbour search (leave-one-out).
    ``evaluations`` counts cost simulations (baseline + distinct candidates,
    at most ``k + 1``); ``profiles`` counts the re-profiling runs needed to
    re-embed the evolving nest between steps.
    """
    machine = machine or DESK_MACHINE
    if not db.entries:
        raise DatabaseError("empty database")
    if model.fingerprint() != db.fingerprint:
        raise DatabaseError(f"database fingerprint {db.fingerprint} does not match model {model.fingerprint()}")
    base = embed_nest(model, target, inputs, machine)
    evaluations, profiles = 1, 0
    seen = {serialize(target): base.cost}
    best = (base.cost, math.inf, "", [])
    outcomes = []
    for entry, dist in db_query(db, base.nest_embedding, k, exclude=target_id):
        out = NeighborOutcome(entry.id, dist, [], [])
        cur = base
        for j, step in enumerate(entry.steps):
            res = match_transformation(step, cur.nest, cur.graph, cur.node_embeddings)
            if not res:
                out.skipped.append((step.transformation.to_text(), res.reason))
                continue
            nxt = apply(res, cur.nest)
            out.applied.append(res)
            if j < len(entry.steps) - 1:
                try:
                    cur = embed_nest(model, nxt, inputs, machine)
                except SimulationError as exc:
                    out.error = str(exc)
                    break
                profiles += 1
            else:
                cur = Embedded(nxt, None, None, None, math.nan)
        outcomes.append(out)
        if out.error or not out.applied:
            continue
        key = serialize(cur.nest)
        if key not in seen:
            try:
                _, seen[key] = cost_of(cur.nest, inputs, machine)
            except SimulationError as exc:
                out.error = str(exc)
                continue
            evaluations += 1
        out.cost = seen[key]
        cand = (out.cost, dist, entry.id, list(out.applied))
        if cand[:3] < best[:3]:
            best = cand
    return TuneReport(target_id or target.name, best[3], base.cost, best[0], evaluations, profiles, outcomes)


# ---------------------------------------------------------------------------
# brute force
# ---------------------------------------------------------------------------


@dataclass
class BruteForceResult:
    sequence: list
    best_cost: float
    baseline_cost: float
    space_size: int
    costs: list = field(default_factory=list)   # (sequence text, cost) in enumeration order

    def to_dict(self) -> dict:
        return {"sequence": [t.to_text() for t in self.sequence], "best_cost": self.best_cost,
                "baseline_cost": self.baseline_cost, "space_size": self.space_size}


def brute_force_tune(nest: LoopNest, inputs: InputBindings, machine: MachineConfig | None = None,
                     limits: SpaceLimits | None = None) -> BruteForceResult:
    """Simulate every sequence of the space; the first minimum wins ties, so
    the empty sequence is kept unless something is strictly faster."""
    machine = machine or DESK_MACHINE
    best_seq, best_cost, baseline, n = [], math.inf, math.nan, 0
    costs = []
    for seq in enumerate_space(nest, limits):
        cur = nest
        for t in seq:
            cur = apply(t, cur)
        _, c = cost_of(cur, inputs, machine)
        n += 1
        costs.append((" ; ".join(t.to_text() for t in seq), c))
        if not seq:
            baseline = c
        if c < best_cost:
            best_seq, best_cost = seq, c
    return BruteForceResult(best_seq, best_cost, baseline, n, costs)


def build_database(items, model: TrainedModel, machine: MachineConfig | None = None,
                   limits: SpaceLimits | None = None):
    """Brute-force every ``(id, nest, inputs)`` and store the improvements.

    Returns ``(database, {id: BruteForceResult})``.
    """
    machine = machine or DESK_MACHINE
    db = Database(model.fingerprint(), model.config.embed_dim)
    results = {}
    for eid, nest, inputs in items:
        res = brute_force_tune(nest, inputs, machine, limits)
        results[eid] = res
        if res.sequence and res.best_cost < res.baseline_cost:
            db_add(db, make_entry(eid, nest, inputs, res.sequence, model, machine, res.baseline_cost, res.best_cost))
        log.info("%s: space %d, best %.0f / %.0f", eid, res.space_size, res.best_cost, res.baseline_cost)
    return db, results
