"""Static graph encoding of a loop nest.

Every IR node (access, map entry, map exit, body) becomes an encoded node and
every memlet is split into an intermediate memlet node with two edges. Each
node carries a kind one-hot and a fixed-width feature vector; the slot map is
returned by :func:`feature_layout` and versioned by a hash of itself.

Sizes, extents and strides are log-scaled with ``log2(1 + x)``; access-matrix
coefficients use the signed variant ``sign(x) * log2(1 + |x|)``; flags are 0/1.
"""
from __future__ import annotations

import ast
import hashlib
import heapq
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .ir import LoopNest, Memlet, node_kind, validate
from .ir.expr import CONST, affine_form, min_args, parse_expr, parse_subscript
from .ir.nest import DYNAMIC, memlet_level

MAX_RANK = 4
MAX_DEPTH = 8
NODE_KINDS = ("access", "map_entry", "map_exit", "body", "memlet")
ELEM_TYPES = ("f32", "f64", "i32", "i64", "bool")
REDUCTIONS = ("sum", "min", "max")


class EncodingError(ValueError):
    pass


def _slots() -> list[tuple[str, int]]:
    R, D = MAX_RANK, MAX_DEPTH
    return [
        ("access.dtype", len(ELEM_TYPES)),
        ("access.bytes_per_element", 1),
        ("access.shape", R),
        ("access.total_size", 1),
        ("access.strides", R),
        ("access.alignment", 1),
        ("access.offset", 1),
        ("access.transient", 1),
        ("access.storage_register", 1),
        ("access.dynamic_shape", 1),
        ("access.is_output", 1),
        ("map_entry.level", 1),
        ("map_entry.dims", 1),
        ("map_entry.extents", R),
        ("map_entry.steps", R),
        ("map_entry.dynamic", 1),
        ("map_entry.symbolic_extent", 1),
        ("map_entry.parallel", 1),
        ("map_entry.dynamic_schedule", 1),
        ("map_entry.chunk", 1),
        ("map_entry.vector_width", 1),
        ("memlet.start", R * (D + 1)),
        ("memlet.stop", R * (D + 1)),
        ("memlet.steps", R),
        ("memlet.has_matrix", 1),
        ("memlet.dynamic", 1),
        ("memlet.indirect", 1),
        ("memlet.reduction", 1),
        ("memlet.reduction_kind", len(REDUCTIONS)),
        ("memlet.write", 1),
        ("memlet.level", 1),
    ]


@lru_cache(maxsize=None)
def feature_layout() -> dict:
    """Slot map ``{name: (offset, width)}`` plus total ``width`` and ``version``."""
    slots, off = {}, 0
    for name, w in _slots():
        slots[name] = (off, w)
        off += w
    desc = json.dumps({"slots": _slots(), "kinds": NODE_KINDS, "max_rank": MAX_RANK, "max_depth": MAX_DEPTH})
    version = "v1-" + hashlib.sha256(desc.encode()).hexdigest()[:12]
    return {"slots": slots, "width": off, "version": version, "kinds": NODE_KINDS}


def _log(x) -> float:
    return float(np.log2(1.0 + max(float(x), 0.0)))


def _slog(x) -> float:
    return float(np.sign(x) * np.log2(1.0 + abs(float(x))))


# ---------------------------------------------------------------------------
# access matrices
# ---------------------------------------------------------------------------


@dataclass
class AccessMatrixEncoding:
    """Affine start/stop (inclusive) matrices over ``iterators`` + constant."""

    start_matrix: np.ndarray  # (rank, len(iterators) + 1), or (0, 0) when non-affine
    stop_matrix: np.ndarray
    steps: np.ndarray
    iterators: tuple = ()
    is_dynamic: bool = False
    is_indirect: bool = False
    is_reduction: bool = False
    reduction_kind: str | None = None

    @property
    def is_empty(self) -> bool:
        return self.start_matrix.size == 0


def _row(form, iterators) -> list[int]:
    return [int(form.get(it, 0)) for it in iterators] + [int(form.get(CONST, 0))]


def encode_access(memlet: Memlet, scope) -> AccessMatrixEncoding:
    """Access matrices of ``memlet`` over the iterators ``scope`` (outer first)."""
    scope = tuple(scope)
    red = memlet.reduction
    flags = dict(is_dynamic=bool(memlet.is_dynamic), is_reduction=red is not None, reduction_kind=red)
    empty = np.zeros((0, 0), dtype=np.int64)
    if not memlet.is_affine:
        return AccessMatrixEncoding(empty, empty.copy(), np.zeros(0, dtype=np.int64), scope,
                                    is_indirect=True, **flags)
    starts, stops, steps = [], [], []
    for text in memlet.subscripts:
        node = parse_subscript(text)
        if isinstance(node, ast.Slice):
            lo = affine_form(node.lower, scope) if node.lower is not None else {CONST: 0}
            # an open end (full range of a dynamic-shape array) encodes as 0; its volume is flagged dynamic
            hi = affine_form(node.upper, scope) if node.upper is not None else {CONST: 1}
            st = affine_form(node.step, ()) if node.step is not None else {CONST: 1}
            if lo is None or hi is None or st is None:
                return AccessMatrixEncoding(empty, empty.copy(), np.zeros(0, dtype=np.int64), scope,
                                            is_indirect=True, **flags)
            hi = {**hi, CONST: hi.get(CONST, 0) - 1}
            step = st.get(CONST, 1)
        else:
            lo = hi = affine_form(node, scope)
            if lo is None:
                return AccessMatrixEncoding(empty, empty.copy(), np.zeros(0, dtype=np.int64), scope,
                                            is_indirect=True, **flags)
            step = 1
        starts.append(_row(lo, scope))
        stops.append(_row(hi, scope))
        steps.append(step)
    return AccessMatrixEncoding(np.array(starts, dtype=np.int64).reshape(len(starts), len(scope) + 1),
                                np.array(stops, dtype=np.int64).reshape(len(stops), len(scope) + 1),
                                np.array(steps, dtype=np.int64), scope, **flags)


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


@dataclass
class EncodedNode:
    kind: str
    features: np.ndarray
    origin: str

    @property
    def one_hot(self) -> np.ndarray:
        v = np.zeros(len(NODE_KINDS))
        v[NODE_KINDS.index(self.kind)] = 1.0
        return v


@dataclass
class EncodedGraph:
    nodes: list
    edges: np.ndarray           # (E, 2) int64, src -> dst node indices
    layout_version: str
    node_origin: dict = field(default_factory=dict)  # encoded index -> IR node / memlet id

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def kinds(self) -> np.ndarray:
        return np.array([NODE_KINDS.index(n.kind) for n in self.nodes], dtype=np.int64)

    @property
    def features(self) -> np.ndarray:
        """Node input matrix: kind one-hot followed by the feature slots."""
        if not self.nodes:
            return np.zeros((0, len(NODE_KINDS) + feature_layout()["width"]))
        return np.stack([np.concatenate([n.one_hot, n.features]) for n in self.nodes])

    def index_of(self, origin: str) -> int:
        for i, o in self.node_origin.items():
            if o == origin:
                return i
        raise KeyError(origin)

    def origin_index(self) -> dict:
        return {o: i for i, o in self.node_origin.items()}

    def to_dict(self) -> dict:
        return {
            "layout_version": self.layout_version,
            "nodes": [{"kind": n.kind, "origin": n.origin, "features": [float(x) for x in n.features]}
                      for n in self.nodes],
            "edges": [[int(a), int(b)] for a, b in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncodedGraph":
        nodes = [EncodedNode(n["kind"], np.array(n["features"], dtype=np.float64), n["origin"]) for n in d["nodes"]]
        edges = np.array(d["edges"], dtype=np.int64).reshape(-1, 2)
        return cls(nodes, edges, d["layout_version"], {i: n.origin for i, n in enumerate(nodes)})

    def save(self, path) -> None:
        """Structured text export (JSON) of node features and the edge list."""
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EncodedGraph":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _put(vec, name, values) -> None:
    off, w = feature_layout()["slots"][name]
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if len(values) > w:
        raise EncodingError(f"{name}: {len(values)} values exceed {w} slots")
    vec[off:off + len(values)] = values


def _iterator_ranges(nest: LoopNest) -> dict:
    """Numeric [lo, hi] interval of every iterator (None when dynamic/unknown)."""
    ranges: dict = {}

    def ev(form):
        if form is None:
            return None
        lo = hi = float(form.get(CONST, 0))
        for k, c in form.items():
            if k == CONST or c == 0:
                continue
            r = ranges.get(k)
            if r is None:
                return None
            a, b = c * r[0], c * r[1]
            lo, hi = lo + min(a, b), hi + max(a, b)
        return lo, hi

    scope: list = []
    for m in nest.maps:
        for p, ext in zip(m.params, m.extents):
            if ext.is_dynamic:
                ranges[p] = None
            else:
                b = ev(affine_form(parse_expr(ext.begin), scope))
                end_node = parse_expr(ext.end)
                args = min_args(end_node)
                e = ev(affine_form(args[0] if args else end_node, scope))
                ranges[p] = None if b is None or e is None else (b[0], e[1] - 1)
            scope.append(p)
    return ranges


def _map_extent(nest: LoopNest, m, j, ranges, scope):
    """(trip count upper bound, step, symbolic flag) for param ``j`` of map ``m``."""
    ext = m.extents[j]
    if ext.is_dynamic:
        return 0.0, 1.0, False
    st = affine_form(parse_expr(ext.step), ())
    step = st.get(CONST, 1) if st else 1
    b = affine_form(parse_expr(ext.begin), scope)
    end_node = parse_expr(ext.end)
    args = min_args(end_node)
    e = affine_form(args[0] if args else end_node, scope)
    if b is None or e is None or step == 0:
        return 0.0, float(step), True
    diff = {k: e.get(k, 0) - b.get(k, 0) for k in set(e) | set(b)}
    symbolic = any(v for k, v in diff.items() if k != CONST) or args is not None
    lo = hi = float(diff.get(CONST, 0))
    for k, c in diff.items():
        if k == CONST or c == 0:
            continue
        r = ranges.get(k)
        if r is None:
            return 0.0, float(step), True
        hi += max(c * r[0], c * r[1])
    trips = max(0.0, np.ceil(hi / abs(step)))
    return trips, float(step), bool(symbolic)


def _access_features(nest: LoopNest, node_id: str) -> np.ndarray:
    vec = np.zeros(feature_layout()["width"])
    a = nest.array(node_id.split(":", 1)[1])
    if a.ndim > MAX_RANK:
        raise EncodingError(f"array {a.name!r} has rank {a.ndim} > {MAX_RANK}")
    onehot = np.zeros(len(ELEM_TYPES))
    onehot[ELEM_TYPES.index(a.elem_type)] = 1
    _put(vec, "access.dtype", onehot)
    _put(vec, "access.bytes_per_element", _log(a.bytes_per_element))
    shape = [0 if s == DYNAMIC else s for s in a.shape]
    _put(vec, "access.shape", [_log(s) for s in shape])
    total = 0 if a.is_dynamic else int(np.prod(shape)) * a.bytes_per_element
    _put(vec, "access.total_size", _log(total))
    strides = [s if isinstance(s, (int, np.integer)) else 0 for s in a.strides]
    _put(vec, "access.strides", [_log(s) for s in strides])
    _put(vec, "access.alignment", _log(a.alignment))
    _put(vec, "access.offset", _log(a.offset))
    _put(vec, "access.transient", float(a.transient))
    _put(vec, "access.storage_register", float(a.storage == "register"))
    _put(vec, "access.dynamic_shape", float(a.is_dynamic))
    _put(vec, "access.is_output", float(node_id.startswith("out:")))
    return vec


def _entry_features(nest: LoopNest, level: int, ranges) -> np.ndarray:
    vec = np.zeros(feature_layout()["width"])
    m = nest.maps[level]
    if len(m.params) > MAX_RANK:
        raise EncodingError(f"map {m.id!r} has {len(m.params)} dimensions > {MAX_RANK}")
    scope = [p for mm in nest.maps[:level] for p in mm.params]
    exts, steps, symbolic = [], [], False
    for j in range(len(m.params)):
        t, s, sym = _map_extent(nest, m, j, ranges, scope)
        exts.append(_log(t))
        steps.append(_log(abs(s)))
        symbolic |= sym
    _put(vec, "map_entry.level", _log(level))
    _put(vec, "map_entry.dims", float(len(m.params)))
    _put(vec, "map_entry.extents", exts)
    _put(vec, "map_entry.steps", steps)
    _put(vec, "map_entry.dynamic", float(m.is_dynamic))
    _put(vec, "map_entry.symbolic_extent", float(symbolic))
    sch = m.schedule
    _put(vec, "map_entry.parallel", float(sch.parallel))
    _put(vec, "map_entry.dynamic_schedule", float(sch.parallel and sch.assignment == "dynamic"))
    _put(vec, "map_entry.chunk", _log(sch.chunk or 0))
    _put(vec, "map_entry.vector_width", _log(sch.vector_width - 1))
    return vec


def _memlet_features(nest: LoopNest, m: Memlet) -> np.ndarray:
    vec = np.zeros(feature_layout()["width"])
    level = memlet_level(nest, m)
    scope = [p for mm in nest.maps[:level] for p in mm.params]
    if len(scope) > MAX_DEPTH:
        raise EncodingError(f"memlet {m.id!r}: {len(scope)} iterators in scope > {MAX_DEPTH}")
    if len(m.subscripts) > MAX_RANK:
        raise EncodingError(f"memlet {m.id!r}: rank {len(m.subscripts)} > {MAX_RANK}")
    enc = encode_access(m, scope)
    if not enc.is_empty:
        cols = MAX_DEPTH + 1
        # iterator columns keep their depth position; the constant column is last
        for name, mat in (("memlet.start", enc.start_matrix), ("memlet.stop", enc.stop_matrix)):
            padded = np.zeros((MAX_RANK, cols))
            r = mat.shape[0]
            padded[:r, :len(scope)] = mat[:, :-1]
            padded[:r, -1] = mat[:, -1]
            _put(vec, name, [_slog(x) for x in padded.reshape(-1)])
        _put(vec, "memlet.steps", [_log(abs(s)) for s in enc.steps])
    _put(vec, "memlet.has_matrix", float(not enc.is_empty))
    _put(vec, "memlet.dynamic", float(enc.is_dynamic))
    _put(vec, "memlet.indirect", float(enc.is_indirect))
    _put(vec, "memlet.reduction", float(enc.is_reduction))
    if enc.reduction_kind:
        onehot = np.zeros(len(REDUCTIONS))
        onehot[REDUCTIONS.index(enc.reduction_kind)] = 1
        _put(vec, "memlet.reduction_kind", onehot)
    _put(vec, "memlet.write", float(m.direction == "write"))
    _put(vec, "memlet.level", _log(level))
    return vec


def _topological(ids: list[str], edges: list[tuple[str, str]]) -> list[str]:
    indeg = {i: 0 for i in ids}
    succ: dict = {i: [] for i in ids}
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    heap = [i for i in ids if indeg[i] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        n = heapq.heappop(heap)
        out.append(n)
        for s in succ[n]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(heap, s)
    if len(out) != len(ids):
        raise EncodingError("graph not acyclic")
    return out


def memlet_node_id(memlet_id: str) -> str:
    return f"memlet:{memlet_id}"


def encode_static(nest: LoopNest) -> EncodedGraph:
    """Encode ``nest``; nodes are ordered topologically with ties by id."""
    problems = validate(nest)
    if problems:
        raise EncodingError("invalid nest: " + "; ".join(str(p) for p in problems))
    if nest.depth > MAX_DEPTH:
        raise EncodingError(f"nest depth {nest.depth} > {MAX_DEPTH}")
    ranges = _iterator_ranges(nest)
    map_level = {m.id: i for i, m in enumerate(nest.maps)}
    ids = list(nest.node_ids)
    edges = []
    memlets = {}
    for m in nest.memlets:
        mid = memlet_node_id(m.id)
        memlets[mid] = m
        ids.append(mid)
        edges += [(m.src, mid), (mid, m.dst)]
    order = _topological(ids, edges)
    width = feature_layout()["width"]
    nodes = []
    for nid in order:
        if nid in memlets:
            nodes.append(EncodedNode("memlet", _memlet_features(nest, memlets[nid]), memlets[nid].id))
            continue
        kind = node_kind(nid)
        if kind == "access":
            feats = _access_features(nest, nid)
        elif kind == "map_entry":
            feats = _entry_features(nest, map_level[nid[6:]], ranges)
        else:
            feats = np.zeros(width)
        nodes.append(EncodedNode(kind, feats, nid))
    pos = {nid: i for i, nid in enumerate(order)}
    e = np.array([(pos[a], pos[b]) for a, b in edges], dtype=np.int64).reshape(-1, 2)
    e = e[np.lexsort((e[:, 1], e[:, 0]))]
    return EncodedGraph(nodes, e, feature_layout()["version"], {i: n.origin for i, n in enumerate(nodes)})


def expected_counts(nest: LoopNest) -> tuple[int, int]:
    """(nodes, edges) implied by the splitting rule."""
    n_access = len(nest.access_nodes())
    entries = sum(1 for n in nest.node_ids if n.startswith("entry:"))
    exits = sum(1 for n in nest.node_ids if n.startswith("exit:"))
    return n_access + entries + exits + 1 + len(nest.memlets), 2 * len(nest.memlets)
