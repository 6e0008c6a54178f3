"""Exact nearest neighbours over embeddings, the coefficient-of-variation
similarity score, the reuse-distance baseline and data locality."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .ir import LoopNest
from .simprof import DESK_MACHINE, InputBindings, MachineConfig, simulate
from .simprof.machine import LINE_BYTES
from .simprof.simulate import FLOPS_PER_OP

REUSE_ITERATIONS = 500


class EmbeddingIndex:
    """Immutable exact index under squared Euclidean distance."""

    def __init__(self, ids, vectors):
        ids = [str(i) for i in ids]
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique")
        X = np.asarray(vectors, dtype=np.float64)
        if X.ndim != 2 or len(X) != len(ids):
            raise ValueError("expected one vector per id")
        self.ids = ids
        self.vectors = X
        self._order = np.argsort(np.array(ids), kind="stable")  # id rank for tie-breaking
        self._rank = np.empty(len(ids), dtype=np.int64)
        self._rank[self._order] = np.arange(len(ids))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def query(self, q, k: int, exclude: str | None = None) -> list[tuple[str, float]]:
        return knn(self, q, k, exclude)


def knn(index: EmbeddingIndex, query, k: int, exclude: str | None = None) -> list[tuple[str, float]]:
    """The ``k`` nearest ids ascending by squared distance, ties by id.
    Asking for more neighbours than candidates returns all candidates."""
    if len(index) == 0:
        raise ValueError("empty index")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise ValueError(f"query has dimension {q.shape[0]}, index {index.dim}")
    d = ((index.vectors - q) ** 2).sum(1)
    order = np.lexsort((index._rank, d))
    out = []
    for i in order:
        if exclude is not None and index.ids[i] == exclude:
            continue
        out.append((index.ids[i], float(d[i])))
        if len(out) == k:
            break
    return out


@dataclass
class SimilarityResult:
    mean_cov: float
    covs: dict          # id -> CoV of its neighbourhood
    excluded: list      # ids whose neighbourhood mean was zero

    def __float__(self) -> float:
        return self.mean_cov


def coefficient_of_variation(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    mu = v.mean()
    if mu == 0:
        raise ZeroDivisionError("zero mean")
    return float(v.std() / mu)


def performance_similarity(index: EmbeddingIndex, metric_values: dict, k: int = 3) -> SimilarityResult:
    """Mean over ids of the CoV of ``{id} + kNN(id)`` for one metric."""
    missing = [i for i in index.ids if i not in metric_values]
    if missing:
        raise ValueError(f"no metric value for {missing[0]!r}")
    if len(index) < k + 1:
        raise ValueError(f"need at least {k + 1} entries")
    covs, excluded = {}, []
    for i, vid in enumerate(index.ids):
        nbrs = knn(index, index.vectors[i], k, exclude=vid)
        vals = [metric_values[vid]] + [metric_values[n] for n, _ in nbrs]
        try:
            covs[vid] = coefficient_of_variation(vals)
        except ZeroDivisionError:
            excluded.append(vid)
    mean = float(np.mean(list(covs.values()))) if covs else math.nan
    return SimilarityResult(mean, covs, excluded)


# ---------------------------------------------------------------------------
# baseline and data locality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineFeatures:
    cache_miss_ratio: float
    bytes_read: float
    bytes_written: float
    arithmetic_intensity: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cache_miss_ratio, self.bytes_read, self.bytes_written, self.arithmetic_intensity])


def reuse_distance_features(nest: LoopNest, inputs: InputBindings, machine: MachineConfig | None = None,
                            iterations: int = REUSE_ITERATIONS) -> BaselineFeatures:
    """Cold single-thread simulation of the first ``iterations`` outermost
    iterations; the four baseline features come from its counters."""
    machine = (machine or DESK_MACHINE).with_threads(1)
    r = simulate(nest, inputs, machine, outer_limit=iterations)
    rd, wr = r.total("mem_read_lines") * LINE_BYTES, r.total("mem_write_lines") * LINE_BYTES
    flops = sum(r.total(name) * w for name, w in FLOPS_PER_OP.items())
    return BaselineFeatures(r.l1_miss_ratio, float(rd), float(wr), flops / max(rd + wr, LINE_BYTES))


def data_locality(nest: LoopNest, inputs: InputBindings, machine: MachineConfig | None = None) -> float:
    """Q / D with Q the unique bytes touched and D the main-memory traffic of
    a cold run; 1.0 when nothing reaches memory."""
    r = simulate(nest, inputs, machine or DESK_MACHINE)
    D = LINE_BYTES * (r.total("mem_read_lines") + r.total("mem_write_lines"))
    if D == 0:
        return 1.0
    return float(min(r.unique_bytes / D, 1.0))


def export_embeddings(path, ids, embeddings, labels: dict | None = None) -> None:
    """CSV with ``id``, the label columns (sorted by name) and ``e0..e{d-1}``."""
    E = np.asarray(embeddings, dtype=np.float64)
    labels = labels or {}
    cols = sorted(labels)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *cols, *(f"e{j}" for j in range(E.shape[1] if E.ndim == 2 else 0))])
        for r, vid in enumerate(ids):
            w.writerow([vid, *(labels[c][r] for c in cols), *(repr(float(x)) for x in E[r])])
