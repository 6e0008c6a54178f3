"""Loop-nest IR: data arrays, a chain of map scopes, one body node and the
memlet edges of the dataflow graph.

Graph node ids follow a fixed convention:

* ``in:A`` / ``out:A`` -- access nodes of array ``A`` on the input/output side
* ``entry:<map id>`` / ``exit:<map id>`` -- map scope delimiters
* ``body`` -- the single body node of the innermost scope

Every memlet is one edge. A body access ``A[i, k]`` inside maps ``m0..m2``
becomes the path ``in:A -> entry:m0 -> entry:m1 -> entry:m2 -> body``; each
edge carries the subset of ``A`` touched by everything inside it.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

from .body import BodyInfo
from .expr import (
    CONST,
    IRSemanticError,
    affine_form,
    min_args,
    names,
    normalize,
    parse_expr,
    parse_subscript,
    render_affine,
    substitute,
)

ELEM_BYTES = {"f32": 4, "f64": 8, "i32": 4, "i64": 8, "bool": 1}
DYNAMIC = "dynamic"
REDUCTIONS = ("sum", "min", "max")


@dataclass(frozen=True)
class DataArray:
    name: str
    elem_type: str
    shape: tuple
    strides: tuple = None
    bytes_per_element: int = None
    transient: bool = False
    alignment: int = 64
    offset: int = 0
    storage: str = "heap"

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        if self.bytes_per_element is None:
            object.__setattr__(self, "bytes_per_element", ELEM_BYTES.get(self.elem_type, 8))
        if self.strides is None:
            object.__setattr__(self, "strides", _row_major(self.shape))
        object.__setattr__(self, "strides", tuple(self.strides))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def is_dynamic(self) -> bool:
        return any(s == DYNAMIC for s in self.shape)


def _row_major(shape: Sequence) -> tuple:
    strides, acc = [], 1
    for s in reversed(shape):
        strides.append(acc)
        acc = acc * s if isinstance(s, int) else acc
    return tuple(reversed(strides))


@dataclass(frozen=True)
class ScheduleAnnotation:
    parallel: bool = False
    assignment: str = "static"
    chunk: int | None = None
    threads: int = 1
    vector_width: int = 1


@dataclass(frozen=True)
class Binding:
    """Runtime binding of a dynamic extent: ``array[index] : array[index + 1]``."""

    array: str
    index: str


@dataclass(frozen=True)
class Extent:
    begin: str
    end: str
    step: str = "1"
    binding: Binding | None = None

    @property
    def is_dynamic(self) -> bool:
        return self.begin == DYNAMIC or self.end == DYNAMIC


@dataclass(frozen=True)
class MapScope:
    id: str
    params: tuple
    extents: tuple
    level: int
    schedule: ScheduleAnnotation = field(default_factory=ScheduleAnnotation)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "extents", tuple(self.extents))

    @property
    def is_dynamic(self) -> bool:
        return any(e.is_dynamic for e in self.extents)


@dataclass(frozen=True)
class Body:
    statements: str


@dataclass(frozen=True)
class Memlet:
    id: str
    src: str
    dst: str
    array: str
    subscripts: tuple
    direction: str
    is_affine: bool
    is_dynamic: bool
    reduction: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "subscripts", tuple(self.subscripts))


@dataclass(frozen=True)
class Violation:
    node: str
    message: str

    def __str__(self) -> str:
        return f"{self.node}: {self.message}"


@dataclass(frozen=True)
class LoopNest:
    name: str
    arrays: tuple
    maps: tuple
    body: Body
    memlets: tuple

    def __post_init__(self):
        object.__setattr__(self, "arrays", tuple(self.arrays))
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "memlets", tuple(self.memlets))

    # -- lookups ---------------------------------------------------------
    @property
    def root_map(self) -> MapScope:
        return self.maps[0]

    @cached_property
    def _arrays(self) -> dict:
        return {a.name: a for a in self.arrays}

    @cached_property
    def _maps(self) -> dict:
        return {m.id: m for m in self.maps}

    def array(self, name: str) -> DataArray:
        return self._arrays[name]

    def map(self, map_id: str) -> MapScope:
        return self._maps[map_id]

    def has_map(self, map_id: str) -> bool:
        return map_id in self._maps

    def map_index(self, map_id: str) -> int:
        return [m.id for m in self.maps].index(map_id)

    @property
    def params(self) -> list[str]:
        return [p for m in self.maps for p in m.params]

    @property
    def depth(self) -> int:
        return len(self.maps)

    @cached_property
    def body_info(self) -> BodyInfo:
        return BodyInfo(self.body.statements)

    # -- graph -----------------------------------------------------------
    @cached_property
    def node_ids(self) -> list[str]:
        """Nodes of the dataflow graph: endpoints of memlets plus the body."""
        seen: dict[str, None] = {}
        for m in self.memlets:
            seen.setdefault(m.src)
            seen.setdefault(m.dst)
        seen.setdefault("body")
        return list(seen)

    def access_nodes(self) -> list[str]:
        return [n for n in self.node_ids if n.startswith(("in:", "out:"))]

    def with_maps(self, maps: Iterable[MapScope]) -> "LoopNest":
        """Rebuild the nest over a new map chain (memlets are re-derived)."""
        return build_nest(self.name, self.arrays, list(maps), self.body.statements)

    def with_schedule(self, map_id: str, schedule: ScheduleAnnotation) -> "LoopNest":
        maps = [replace(m, schedule=schedule) if m.id == map_id else m for m in self.maps]
        return replace(self, maps=tuple(maps))


def node_kind(node_id: str) -> str:
    if node_id == "body":
        return "body"
    prefix = node_id.split(":", 1)[0]
    return {"in": "access", "out": "access", "entry": "map_entry", "exit": "map_exit"}.get(prefix, "unknown")


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------


def make_map(map_id: str, param: str, begin, end, step=1, level: int = 0,
             schedule: ScheduleAnnotation | None = None, binding: Binding | None = None) -> MapScope:
    ext = Extent(str(begin), str(end), str(step), binding)
    return MapScope(map_id, (param,), (ext,), level, schedule or ScheduleAnnotation())


def build_nest(name: str, arrays: Sequence[DataArray], maps: Sequence[MapScope], statements: str) -> LoopNest:
    """Construct a nest, deriving the full memlet graph from the body accesses."""
    maps = [replace(m, level=i) for i, m in enumerate(maps)]
    info = BodyInfo(statements)
    arr = {a.name: a for a in arrays}
    depth = len(maps)
    memlets: list[Memlet] = []
    counter: dict[str, int] = {}

    def base_id(array: str) -> str:
        n = counter.get(array, 0)
        counter[array] = n + 1
        return f"{array}{n}"

    for acc in info.accesses:
        if acc.array not in arr:
            raise IRSemanticError(f"undeclared array {acc.array!r}")
        base = base_id(acc.array)
        for level in range(depth + 1):
            subs, dyn, aff = propagate(acc.subscripts, maps, level, arr[acc.array])
            if acc.direction == "read":
                src = f"in:{acc.array}" if level == 0 else f"entry:{maps[level - 1].id}"
                dst = "body" if level == depth else f"entry:{maps[level].id}"
            else:
                src = "body" if level == depth else f"exit:{maps[level].id}"
                dst = f"out:{acc.array}" if level == 0 else f"exit:{maps[level - 1].id}"
            memlets.append(Memlet(f"{base}@{level}", src, dst, acc.array, subs, acc.direction, aff, dyn,
                                  acc.reduction if acc.direction == "write" else None))

    for b, m in enumerate(maps):
        for ext in m.extents:
            if ext.binding is None:
                continue
            bname = ext.binding.array
            if bname not in arr:
                raise IRSemanticError(f"undeclared array {bname!r}")
            base = base_id(bname)
            idx = normalize(ext.binding.index)
            for level in range(b + 1):
                subs, dyn, aff = propagate((f"{idx}:{idx} + 2",), maps[:b], level, arr[bname])
                src = f"in:{bname}" if level == 0 else f"entry:{maps[level - 1].id}"
                memlets.append(Memlet(f"{base}@{level}", src, f"entry:{maps[level].id}", bname, subs,
                                      "read", aff, dyn))
    return LoopNest(name, tuple(arrays), tuple(maps), Body(statements), tuple(memlets))


def range_bounds(ext: Extent, scope: Sequence[str]):
    """Affine lower/upper (inclusive) bounds of an extent, or ``None``.

    A guarded end ``min(a, b)`` is bounded by its first affine argument.
    """
    if ext.is_dynamic:
        return None
    b = affine_form(parse_expr(ext.begin), scope)
    end_node = parse_expr(ext.end)
    args = min_args(end_node)
    e = affine_form(args[0] if args else end_node, scope)
    st = affine_form(parse_expr(ext.step), ())
    if b is None or e is None or st is None:
        return None
    if st[CONST] > 0:
        return b, {**e, CONST: e[CONST] - 1}
    return {**e, CONST: e[CONST] + 1}, b


def propagate(subscripts: Sequence[str], maps: Sequence[MapScope], level: int, array: DataArray):
    """Subset of ``subscripts`` (written at the innermost level of ``maps``)
    seen from outside map ``level``: the params of maps ``level..`` are
    eliminated by interval arithmetic on their extents.

    Returns ``(subset strings, is_dynamic, is_affine)``.
    """
    outer = [p for m in maps[:level] for p in m.params]
    all_params = [p for m in maps for p in m.params]
    eliminated = [m for m in maps[level:]]
    dynamic = any(m.is_dynamic for m in eliminated)
    out, affine = [], True
    for d, text in enumerate(subscripts):
        node = parse_subscript(text)
        if isinstance(node, ast.Slice):
            lo = affine_form(node.lower, all_params) if node.lower is not None else {CONST: 0}
            hi = affine_form(node.upper, all_params) if node.upper is not None else None
            if lo is None or hi is None:
                lo = hi = None
            else:
                hi = dict(hi)
                hi[CONST] = hi.get(CONST, 0) - 1
        else:
            lo = hi = affine_form(node, all_params)
        if lo is None:
            # data-dependent subscript
            if level == len(maps):
                out.append(normalize(text))
                affine = False
                dynamic = True
            else:
                out.append(_full_range(array, d))
                dynamic = True
            continue
        ok = True
        for m in reversed(eliminated):
            scope = [p for mm in maps[: maps.index(m)] for p in mm.params]
            for p, ext in zip(m.params, m.extents):
                if lo.get(p, 0) == 0 and hi.get(p, 0) == 0:
                    continue
                bounds = range_bounds(ext, scope)
                if bounds is None:
                    ok = False
                    break
                low_p, high_p = bounds
                lo = substitute(lo, p, low_p if lo.get(p, 0) > 0 else high_p)
                hi = substitute(hi, p, high_p if hi.get(p, 0) > 0 else low_p)
            if not ok:
                break
        if not ok:
            out.append(_full_range(array, d))
            dynamic = True
            continue
        if lo == hi:
            out.append(render_affine(lo, outer))
        else:
            if _is_const(lo) and _is_const(hi) and isinstance(array.shape[d], int):
                lo = {CONST: max(lo[CONST], 0)}
                hi = {CONST: min(hi[CONST], array.shape[d] - 1)}
            hi_ex = dict(hi)
            hi_ex[CONST] = hi.get(CONST, 0) + 1
            out.append(f"{render_affine(lo, outer)}:{render_affine(hi_ex, outer)}")
    return tuple(out), dynamic, affine


def _is_const(form) -> bool:
    return all(k == CONST for k in form)


def _full_range(array: DataArray, d: int) -> str:
    n = array.shape[d]
    return f"0:{n}" if isinstance(n, int) else ":"


def subscript_is_affine(text: str, scope: Sequence[str]) -> bool:
    node = parse_subscript(text)
    if isinstance(node, ast.Slice):
        parts = [p for p in (node.lower, node.upper, node.step) if p is not None]
        return all(affine_form(p, scope) is not None for p in parts)
    return affine_form(node, scope) is not None


# ---------------------------------------------------------------------------
# scopes of memlets
# ---------------------------------------------------------------------------


def memlet_scope(nest: LoopNest, m: Memlet) -> list[str]:
    """Iterators in scope where memlet ``m`` lives."""
    level = memlet_level(nest, m)
    return [p for mm in nest.maps[:level] for p in mm.params]


def memlet_level(nest: LoopNest, m: Memlet) -> int:
    """Number of maps enclosing the memlet edge."""
    ids = [mm.id for mm in nest.maps]
    if m.dst == "body" or m.src == "body":
        return len(ids)
    if m.direction == "read":
        if m.src.startswith("entry:"):
            return ids.index(m.src[6:]) + 1
        return 0
    if m.dst.startswith("exit:"):
        return ids.index(m.dst[5:]) + 1
    return 0


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate(nest: LoopNest) -> list[Violation]:
    """Return every violated invariant; an empty list means the nest is valid."""
    v: list[Violation] = []
    add = lambda node, msg: v.append(Violation(node, msg))  # noqa: E731

    # arrays
    arrays: dict[str, DataArray] = {}
    for a in nest.arrays:
        node = f"array:{a.name}"
        if a.name in arrays:
            add(node, "duplicate array name")
        arrays[a.name] = a
        if a.elem_type not in ELEM_BYTES:
            add(node, f"unknown element type {a.elem_type!r}")
        elif a.bytes_per_element != ELEM_BYTES[a.elem_type]:
            add(node, "bytes_per_element does not match element type")
        if a.bytes_per_element not in (1, 4, 8):
            add(node, "bytes_per_element must be 1, 4 or 8")
        if len(a.shape) != len(a.strides):
            add(node, "shape and strides differ in length")
        if len(a.shape) == 0:
            add(node, "arrays need at least one dimension")
        for s in a.shape:
            if s != DYNAMIC and (not isinstance(s, int) or s < 1):
                add(node, f"invalid shape entry {s!r}")
        if a.storage not in ("heap", "register"):
            add(node, f"unknown storage {a.storage!r}")
        if a.alignment < 1 or a.alignment & (a.alignment - 1):
            add(node, "alignment must be a power of two")
        if a.offset < 0:
            add(node, "negative offset")

    # maps
    if not nest.maps:
        add("nest", "no root map scope")
    seen_params: set[str] = set()
    seen_ids: set[str] = set()
    scope: list[str] = []
    parallel = 0
    for idx, m in enumerate(nest.maps):
        node = f"entry:{m.id}"
        if m.id in seen_ids:
            add(node, "duplicate map id")
        seen_ids.add(m.id)
        if m.level != idx:
            add(node, f"level {m.level} does not match nesting depth {idx}")
        if not m.params or len(m.params) != len(m.extents):
            add(node, "params and extents differ in length")
        for p in m.params:
            if p in seen_params:
                add(node, f"duplicate iterator {p!r}")
            seen_params.add(p)
        for ext in m.extents:
            _check_extent(nest, m, ext, scope, arrays, add)
        s = m.schedule
        if s.assignment not in ("static", "dynamic"):
            add(node, f"unknown assignment {s.assignment!r}")
        if (s.chunk is not None) != (s.assignment == "dynamic"):
            add(node, "chunk must be given exactly for dynamic assignment")
        if s.chunk is not None and s.chunk < 1:
            add(node, "chunk must be positive")
        if s.threads < 1:
            add(node, "threads must be positive")
        if s.vector_width not in (1, 2, 4, 8):
            add(node, "vector_width must be 1, 2, 4 or 8")
        if s.vector_width > 1 and idx != len(nest.maps) - 1:
            add(node, "vector_width applies only to the innermost scope")
        parallel += bool(s.parallel)
        scope.extend(m.params)
    if parallel > 1:
        add("nest", "at most one map may be parallel")

    # body
    try:
        info = nest.body_info
    except Exception as exc:  # statements failed to parse or analyze
        add("body", str(exc))
        info = None
    if info is not None:
        known = set(scope) | set(info.locals) | set(info.loop_vars) | set(arrays) | {"min", "max", "abs", "sqrt", "int", "float", "range", "True", "False"}
        for n in sorted(names(ast.Module(body=info.tree, type_ignores=[])) - known):
            add("body", f"unknown name {n!r}")
        for acc in info.accesses:
            if acc.array not in arrays:
                add("body", f"undeclared array {acc.array!r}")
            elif len(acc.subscripts) != arrays[acc.array].ndim:
                add("body", f"access {acc.array}[{', '.join(acc.subscripts)}] has wrong rank")

    # memlets
    map_ids = [m.id for m in nest.maps]
    seen_m: set[str] = set()
    for m in nest.memlets:
        node = m.id
        if m.id in seen_m:
            add(node, "duplicate memlet id")
        seen_m.add(m.id)
        if m.array not in arrays:
            add(node, f"undeclared array {m.array!r}")
            continue
        bad_ref = False
        for ref in (m.src, m.dst):
            kind, _, name = ref.partition(":")
            if ref == "body":
                continue
            if kind in ("in", "out"):
                if name not in arrays:
                    add(node, f"undeclared array {name!r}")
                    bad_ref = True
                elif name != m.array:
                    add(node, f"access node {ref} does not hold array {m.array!r}")
            elif kind in ("entry", "exit"):
                if name not in map_ids:
                    add(node, f"unknown map {name!r}")
                    bad_ref = True
            else:
                add(node, f"unknown node reference {ref!r}")
                bad_ref = True
        if bad_ref:
            continue
        if m.direction not in ("read", "write"):
            add(node, f"unknown direction {m.direction!r}")
            continue
        if m.direction == "read" and not (m.src.startswith(("in:", "entry:")) and (m.dst == "body" or m.dst.startswith("entry:"))):
            add(node, "read memlet must flow from an access node or map entry into the scope")
        if m.direction == "write" and not ((m.src == "body" or m.src.startswith("exit:")) and m.dst.startswith(("exit:", "out:"))):
            add(node, "write memlet must flow from the body or a map exit outwards")
        if m.reduction is not None and (m.reduction not in REDUCTIONS or m.direction != "write"):
            add(node, "reductions are only allowed on write memlets")
        if len(m.subscripts) != arrays[m.array].ndim:
            add(node, "subscript count does not match array rank")
            continue
        try:
            mscope = memlet_scope(nest, m)
        except ValueError:
            continue
        local = set(info.locals) | set(info.loop_vars) if info is not None and (m.src == "body" or m.dst == "body") else set()
        allowed = set(mscope) | local | set(arrays) | {"min", "max", "abs", "sqrt", "int", "float"}
        aff = True
        for s in m.subscripts:
            try:
                pnode = parse_subscript(s)
            except Exception as exc:
                add(node, str(exc))
                aff = False
                continue
            for n in names(pnode) - allowed:
                add(node, f"iterator {n!r} out of scope")
            aff &= subscript_is_affine(s, mscope)
        if aff != m.is_affine:
            add(node, "is_affine flag disagrees with subscripts")
        if not aff and not m.is_dynamic:
            add(node, "non-affine memlet must be flagged dynamic")

    # scope structure and acyclicity
    ids = nest.node_ids
    for mid in map_ids:
        has_entry = f"entry:{mid}" in ids
        has_exit = f"exit:{mid}" in ids
        if has_entry != has_exit:
            add(f"entry:{mid}" if has_entry else f"exit:{mid}", "unmatched map scope")
    if _has_cycle(nest):
        add("nest", "graph not acyclic")
    _check_scope_edges(nest, add)

    # body accesses <-> body-adjacent memlets
    if info is not None:
        params = nest.params

        def canon(text):
            node = parse_subscript(text)
            form = None if isinstance(node, ast.Slice) else affine_form(node, params)
            return normalize(text) if form is None else render_affine(form, params)

        wanted: dict[tuple, int] = {}
        for acc in info.accesses:
            wanted[(acc.array, tuple(canon(s) for s in acc.subscripts), acc.direction, acc.reduction)] = 0
        for m in nest.memlets:
            if m.dst != "body" and m.src != "body":
                continue
            try:
                key = (m.array, tuple(canon(s) for s in m.subscripts), m.direction, m.reduction)
            except Exception:
                continue
            if key in wanted:
                wanted[key] += 1
            else:
                add(m.id, "memlet does not correspond to any body access")
        for key, count in wanted.items():
            text = f"{key[0]}[{', '.join(key[1])}]"
            if count == 0:
                add("body", f"access {text} ({key[2]}) has no memlet")
            elif count > 1:
                add("body", f"access {text} ({key[2]}) has more than one memlet")
    return v


def _check_extent(nest, m, ext, scope, arrays, add) -> None:
    node = f"entry:{m.id}"
    if ext.is_dynamic:
        if ext.binding is not None:
            b = ext.binding
            if b.array not in arrays:
                add(node, f"undeclared array {b.array!r}")
            elif arrays[b.array].elem_type not in ("i32", "i64"):
                add(node, "dynamic extent binding must be an integer array")
            try:
                for n in names(parse_expr(b.index)) - set(scope):
                    add(node, f"iterator {n!r} out of scope")
            except Exception as exc:
                add(node, str(exc))
            expected = [mm for mm in nest.memlets if mm.array == b.array and mm.dst == node]
            if not expected:
                add(node, f"dynamic extent binding {b.array!r} has no memlet")
    for part in ([] if ext.begin == DYNAMIC else [ext.begin]) + ([] if ext.end == DYNAMIC else [ext.end]):
        try:
            for n in names(parse_expr(part)) - set(scope) - {"min", "max"}:
                add(node, f"iterator {n!r} out of scope")
        except Exception as exc:
            add(node, str(exc))
    try:
        st = affine_form(parse_expr(ext.step), ())
        if st is None:
            add(node, "step must be an integer constant")
        elif st[CONST] == 0:
            add(node, "step must be nonzero")
    except Exception as exc:
        add(node, str(exc))


def _has_cycle(nest: LoopNest) -> bool:
    succ: dict[str, list[str]] = {n: [] for n in nest.node_ids}
    indeg = {n: 0 for n in nest.node_ids}
    for m in nest.memlets:
        succ[m.src].append(m.dst)
        indeg[m.dst] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        n = ready.pop()
        seen += 1
        for s in succ[n]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
    return seen != len(indeg)


def _check_scope_edges(nest: LoopNest, add) -> None:
    ids = [m.id for m in nest.maps]
    pos = {mid: i for i, mid in enumerate(ids)}
    last = len(ids) - 1
    for m in nest.memlets:
        s_kind, d_kind = node_kind(m.src), node_kind(m.dst)
        if s_kind == "unknown" or d_kind == "unknown":
            continue
        ok = True
        if m.dst.startswith("entry:") and m.dst[6:] in pos:
            lv = pos[m.dst[6:]]
            ok = (m.src.startswith("in:") and lv == 0) or (m.src.startswith("entry:") and pos.get(m.src[6:], -9) == lv - 1)
        elif m.dst == "body":
            ok = m.src.startswith("entry:") and pos.get(m.src[6:], -9) == last
        elif m.src == "body":
            ok = m.dst.startswith("exit:") and pos.get(m.dst[5:], -9) == last
        elif m.src.startswith("exit:") and m.src[5:] in pos:
            lv = pos[m.src[5:]]
            ok = (m.dst.startswith("out:") and lv == 0) or (m.dst.startswith("exit:") and pos.get(m.dst[5:], -9) == lv - 1)
        if not ok:
            add(m.id, f"memlet {m.src} -> {m.dst} crosses scopes")
    # every memlet leaving a map entry (or entering a map exit) continues a chain for its array
    into = {(m.dst, m.array) for m in nest.memlets}
    out_of = {(m.src, m.array) for m in nest.memlets}
    for m in nest.memlets:
        if m.src.startswith("entry:") and (m.src, m.array) not in into:
            add(m.id, f"no memlet of {m.array!r} enters {m.src}")
        if m.dst.startswith("exit:") and (m.dst, m.array) not in out_of:
            add(m.id, f"no memlet of {m.array!r} leaves {m.dst}")


def canonical_schedule(nest: LoopNest, threads: int) -> LoopNest:
    """Parallelize the outermost map statically; every inner map sequential
    (an inner vector width is kept)."""
    maps = []
    for i, m in enumerate(nest.maps):
        if i == 0:
            sched = ScheduleAnnotation(parallel=True, assignment="static", chunk=None, threads=threads, vector_width=1)
        else:
            sched = ScheduleAnnotation(vector_width=m.schedule.vector_width)
        maps.append(replace(m, schedule=sched))
    return replace(nest, maps=tuple(maps))
