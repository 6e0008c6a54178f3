"""Loop-nest transformations: legality, application, induced subgraphs and
enumeration of the schedule space searched by the brute-force oracle.

Textual form of one step (used by the database)::

    interchange(m0, m1)   tile(m1, 32)   parallelize(m2, 4)
    set_schedule(m0, dynamic:8)   set_schedule(m0, static)   vectorize(m2, 4)

Legality is syntactic and conservative. A write is *owned* by a map when
one of its subscript dimensions is ``c * x + (iterators of enclosing maps)``
with ``x`` the map's iterator; an iterator is *bound* for a write when some
dimension is exactly ``c * x + const``, otherwise *free*. Updates of one
element happen in the order of the free iterators, so an interchange is
legal when it keeps the relative order of every write's free iterators.
"""
from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterator

from .ir import LoopNest, MapScope, ScheduleAnnotation, validate
from .ir.expr import CONST, affine_form, min_args, names, parse_expr, parse_subscript, render_affine
from .ir.nest import DYNAMIC, Extent

KINDS = ("tile", "interchange", "parallelize", "set_schedule", "vectorize")
_ELEM_BITS = {"f32": 32, "f64": 64, "i32": 32, "i64": 64, "bool": 8}


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class Transformation:
    kind: str
    maps: tuple
    arg: object = None  # tile size | thread count | "static"/"dynamic:c" | width

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if self.kind not in KINDS:
            raise TransformError(f"unknown transformation kind {self.kind!r}")
        want = 2 if self.kind == "interchange" else 1
        if len(self.maps) != want:
            raise TransformError(f"{self.kind} takes {want} map id(s)")
        if self.kind == "interchange" and self.maps[0] == self.maps[1]:
            raise TransformError("interchange needs two distinct maps")
        if self.kind in ("tile", "parallelize", "vectorize"):
            if not isinstance(self.arg, int) or isinstance(self.arg, bool) or self.arg < 1:
                raise TransformError(f"{self.kind} needs a positive integer argument")
        if self.kind == "set_schedule":
            _parse_schedule(self.arg)

    @property
    def anchors(self) -> tuple:
        return tuple(f"entry:{m}" for m in self.maps)

    def to_text(self) -> str:
        args = list(self.maps) + ([] if self.arg is None else [str(self.arg)])
        return f"{self.kind}({', '.join(args)})"

    __str__ = to_text

    def with_maps(self, maps) -> "Transformation":
        return Transformation(self.kind, tuple(maps), self.arg)


def _parse_schedule(text) -> tuple[str, int | None]:
    if text == "static":
        return "static", None
    m = re.fullmatch(r"dynamic:(\d+)", str(text))
    if not m or int(m.group(1)) < 1:
        raise TransformError(f"bad schedule {text!r}; expected 'static' or 'dynamic:<chunk>'")
    return "dynamic", int(m.group(1))


_STEP_RE = re.compile(r"\s*(\w+)\(\s*([^)]*)\)\s*")


def parse_transformation(text: str) -> Transformation:
    m = _STEP_RE.fullmatch(text)
    if not m:
        raise TransformError(f"cannot parse transformation {text!r}")
    kind, args = m.group(1), [a.strip() for a in m.group(2).split(",") if a.strip()]
    if kind == "interchange":
        return Transformation(kind, tuple(args))
    if len(args) != 2:
        raise TransformError(f"cannot parse transformation {text!r}")
    arg = args[1] if kind == "set_schedule" else int(args[1])
    return Transformation(kind, (args[0],), arg)


def sequence_to_json(seq) -> str:
    return json.dumps([t.to_text() for t in seq])


def sequence_from_json(text: str) -> list[Transformation]:
    return [parse_transformation(s) for s in json.loads(text)]


# ---------------------------------------------------------------------------
# analysis helpers
# ---------------------------------------------------------------------------


@dataclass
class Applicability:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


YES = Applicability(True)


def _no(reason: str) -> Applicability:
    return Applicability(False, reason)


def _writes(nest: LoopNest):
    return [a for a in nest.body_info.accesses if a.direction == "write"]


def _forms(nest: LoopNest, subs):
    params = nest.params
    out = []
    for s in subs:
        node = parse_subscript(s)
        out.append(None if isinstance(node, ast.Slice) else affine_form(node, params))
    return out


def _canon(nest: LoopNest, subs) -> tuple:
    return tuple(render_affine(f, nest.params) if f is not None else s for s, f in zip(subs, _forms(nest, subs)))


def _consistent_writes(nest: LoopNest) -> str | None:
    """Reason string when a written array is touched at different subscripts."""
    for w in _writes(nest):
        key = _canon(nest, w.subscripts)
        for a in nest.body_info.accesses:
            if a.array == w.array and _canon(nest, a.subscripts) != key:
                return f"array {w.array!r} is accessed at different subscripts"
    return None


def _owns(nest: LoopNest, map_id: str) -> bool:
    """Every write has a dimension driven by the map's iterator plus outer
    iterators. Element loops of a tile count as driven by the tile loop,
    since distinct tiles cover disjoint element ranges."""
    idx = nest.map_index(map_id)
    m = nest.maps[idx]
    outer = {p for mm in nest.maps[:idx] for p in mm.params}
    driven = set(m.params)
    for mm in nest.maps[idx + 1:]:
        if len(mm.params) == 1 and _tile_parent(mm, nest.params) in driven:
            driven.add(mm.params[0])
    for w in _writes(nest):
        ok = False
        for f in _forms(nest, w.subscripts):
            if f is None:
                continue
            if any(f.get(p, 0) for p in driven) and all(
                    k == CONST or k in outer or k in driven or not v for k, v in f.items()):
                ok = True
                break
        if not ok:
            return False
    return True


def _free_iterators(nest: LoopNest, write) -> set | None:
    """Iterators not pinned to one element of ``write``; ``None`` means all."""
    forms = _forms(nest, write.subscripts)
    if any(f is None for f in forms):
        return None
    bound = set()
    for f in forms:
        its = [k for k, v in f.items() if k != CONST and v]
        if len(its) == 1:
            bound.add(its[0])
    # a tile loop y is fixed by its element loop x when x runs over [c*y + b, c*y + b + c)
    changed = True
    while changed:
        changed = False
        for m in nest.maps:
            if len(m.params) != 1 or m.params[0] not in bound:
                continue
            y = _tile_parent(m, nest.params)
            if y is not None and y not in bound:
                bound.add(y)
                changed = True
    return set(nest.params) - bound


def _tile_parent(m: MapScope, params) -> str | None:
    ext = m.extents[0]
    if ext.is_dynamic:
        return None
    lo = affine_form(parse_expr(ext.begin), params)
    end = parse_expr(ext.end)
    args = min_args(end)
    hi = affine_form(args[0] if args else end, params)
    if lo is None or hi is None:
        return None
    its = [k for k, v in lo.items() if k != CONST and v]
    if len(its) != 1:
        return None
    y = its[0]
    c = lo[y]
    width = hi.get(CONST, 0) - lo.get(CONST, 0)
    same = all(hi.get(k, 0) == lo.get(k, 0) for k in set(lo) | set(hi) if k != CONST)
    return y if c > 0 and same and 0 < width <= c else None


def _racy(nest: LoopNest) -> bool:
    return any(m.schedule.parallel and not _owns(nest, m.id) for m in nest.maps)


def _single_param(m: MapScope) -> bool:
    return len(m.params) == 1


def _extent_names(m: MapScope) -> set:
    out = set()
    for e in m.extents:
        for part in (e.begin, e.end):
            if part != DYNAMIC:
                out |= names(parse_expr(part))
        if e.binding is not None:
            out |= names(parse_expr(e.binding.index))
    return out - {"min", "max"}


def _const(text: str):
    f = affine_form(parse_expr(text), ())
    return None if f is None or any(k != CONST for k in f) else f[CONST]


def _check_order(maps) -> str | None:
    seen: set = set()
    for m in maps:
        bad = _extent_names(m) - seen
        if bad:
            return f"extent of {m.id} depends on inner iterator {sorted(bad)[0]!r}"
        seen |= set(m.params)
    return None


# ---------------------------------------------------------------------------
# applicability
# ---------------------------------------------------------------------------


def applicable(t: Transformation, nest: LoopNest) -> Applicability:
    """Whether ``t`` applies to ``nest`` without changing its results."""
    for mid in t.maps:
        if not nest.has_map(mid):
            return _no(f"unknown map {mid!r}")
    if t.kind != "vectorize" and _racy(nest):
        return _no("parallel map does not own its writes")
    return _CHECKS[t.kind](t, nest)


def _check_tile(t: Transformation, nest: LoopNest) -> Applicability:
    m = nest.map(t.maps[0])
    if not _single_param(m):
        return _no("multi-dimensional map")
    ext = m.extents[0]
    if ext.is_dynamic:
        return _no("dynamic extent")
    b, e, st = _const(ext.begin), _const(ext.end), _const(ext.step)
    if b is None or e is None:
        return _no("extent is not a compile-time constant")
    if st != 1:
        return _no("non-unit step")
    s = t.arg
    if s < 2 or s >= e - b:
        return _no("tile size must be in [2, extent)")
    if f"{m.params[0]}_o" in nest.params or nest.has_map(f"{m.id}_o"):
        return _no("map already tiled")
    return YES


def _check_interchange(t: Transformation, nest: LoopNest) -> Applicability:
    ia, ib = sorted(nest.map_index(x) for x in t.maps)
    a, b = nest.maps[ia], nest.maps[ib]
    if not (_single_param(a) and _single_param(b)):
        return _no("multi-dimensional map")
    maps = list(nest.maps)
    maps[ia], maps[ib] = b, a
    reason = _check_order(maps)
    if reason:
        return _no(reason)
    if ib == len(maps) - 1 and nest.maps[-1].schedule.vector_width > 1:
        return _no("vectorized map must stay innermost")
    reason = _consistent_writes(nest)
    if reason:
        return _no(reason)
    old = [p for m in nest.maps for p in m.params]
    new = [p for m in maps for p in m.params]
    for w in _writes(nest):
        free = _free_iterators(nest, w)
        if free is None:
            return _no(f"write to {w.array!r} is not affine")
        if [p for p in old if p in free] != [p for p in new if p in free]:
            return _no(f"reorders updates of {w.array!r}")
    return YES


def _check_parallelize(t: Transformation, nest: LoopNest) -> Applicability:
    m = nest.map(t.maps[0])
    if m.schedule.parallel and m.schedule.threads == t.arg:
        return _no("already parallel")
    if t.arg < 2:
        return _no("parallelize needs at least 2 threads")
    reason = _consistent_writes(nest)
    if reason:
        return _no(reason)
    if not _owns(nest, m.id):
        return _no(f"iterator of {m.id} does not own every write")
    return YES


def _check_set_schedule(t: Transformation, nest: LoopNest) -> Applicability:
    m = nest.map(t.maps[0])
    if not m.schedule.parallel:
        return _no("map is not parallel")
    kind, chunk = _parse_schedule(t.arg)
    if (kind, chunk) == (m.schedule.assignment, m.schedule.chunk):
        return _no("schedule unchanged")
    return YES


def _check_vectorize(t: Transformation, nest: LoopNest) -> Applicability:
    m = nest.map(t.maps[0])
    if nest.map_index(m.id) != nest.depth - 1:
        return _no("not the innermost map")
    if not _single_param(m):
        return _no("multi-dimensional map")
    if t.arg not in (2, 4, 8):
        return _no("width must be 2, 4 or 8")
    if m.schedule.vector_width == t.arg:
        return _no("already vectorized at this width")
    if m.is_dynamic:
        return _no("dynamic extent")
    if _const(m.extents[0].step) != 1:
        return _no("non-unit step")
    if nest.body_info.has_control_flow:
        return _no("body has control flow")
    x = m.params[0]
    for w in _writes(nest):
        forms = _forms(nest, w.subscripts)
        if any(f is None for f in forms):
            return _no(f"store to {w.array!r} is not affine")
        if forms[-1].get(x, 0) != 1 or any(f.get(x, 0) for f in forms[:-1]):
            return _no(f"store to {w.array!r} is not unit-stride in {x}")
        bits = _ELEM_BITS[nest.array(w.array).elem_type]
        if t.arg * bits > 512:
            return _no("vector wider than 512 bits")
    return YES


_CHECKS = {
    "tile": _check_tile,
    "interchange": _check_interchange,
    "parallelize": _check_parallelize,
    "set_schedule": _check_set_schedule,
    "vectorize": _check_vectorize,
}


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------


def apply(t: Transformation, nest: LoopNest) -> LoopNest:
    ok = applicable(t, nest)
    if not ok:
        raise TransformError(f"{t.to_text()} not applicable: {ok.reason}")
    out = _APPLY[t.kind](t, nest)
    problems = validate(out)
    if problems:  # pragma: no cover - guarded by the applicability rules
        raise TransformError(f"{t.to_text()} produced an invalid nest: {problems[0]}")
    return out


def apply_sequence(seq, nest: LoopNest) -> LoopNest:
    for t in seq:
        nest = apply(t, nest)
    return nest


def _apply_tile(t: Transformation, nest: LoopNest) -> LoopNest:
    idx = nest.map_index(t.maps[0])
    m = nest.maps[idx]
    x = m.params[0]
    xo = f"{x}_o"
    b, e, s = _const(m.extents[0].begin), _const(m.extents[0].end), t.arg
    E = e - b
    start = {xo: s, CONST: b}
    stop = {xo: s, CONST: b + s}
    end = render_affine(stop, [xo]) if E % s == 0 else f"min({render_affine(stop, [xo])}, {e})"
    outer = MapScope(f"{m.id}_o", (xo,), (Extent("0", str(math.ceil(E / s)), "1"),), idx,
                     replace(m.schedule, vector_width=1))
    inner = replace(m, extents=(Extent(render_affine(start, [xo]), end, "1"),),
                    schedule=ScheduleAnnotation(vector_width=m.schedule.vector_width))
    maps = list(nest.maps[:idx]) + [outer, inner] + list(nest.maps[idx + 1:])
    return nest.with_maps(maps)


def _apply_interchange(t: Transformation, nest: LoopNest) -> LoopNest:
    ia, ib = (nest.map_index(x) for x in t.maps)
    maps = list(nest.maps)
    maps[ia], maps[ib] = maps[ib], maps[ia]
    return nest.with_maps(maps)


def _apply_parallelize(t: Transformation, nest: LoopNest) -> LoopNest:
    maps = []
    for m in nest.maps:
        vw = m.schedule.vector_width
        if m.id == t.maps[0]:
            sched = ScheduleAnnotation(True, "static", None, t.arg, vw)
        else:
            sched = ScheduleAnnotation(vector_width=vw)
        maps.append(replace(m, schedule=sched))
    return replace(nest, maps=tuple(maps))


def _apply_set_schedule(t: Transformation, nest: LoopNest) -> LoopNest:
    m = nest.map(t.maps[0])
    kind, chunk = _parse_schedule(t.arg)
    return nest.with_schedule(m.id, replace(m.schedule, assignment=kind, chunk=chunk))


def _apply_vectorize(t: Transformation, nest: LoopNest) -> LoopNest:
    m = nest.map(t.maps[0])
    return nest.with_schedule(m.id, replace(m.schedule, vector_width=t.arg))


_APPLY = {
    "tile": _apply_tile,
    "interchange": _apply_interchange,
    "parallelize": _apply_parallelize,
    "set_schedule": _apply_set_schedule,
    "vectorize": _apply_vectorize,
}


# ---------------------------------------------------------------------------
# induced subgraph
# ---------------------------------------------------------------------------


def induced_subgraph(t: Transformation, nest: LoopNest) -> list[str]:
    """Anchor node ids followed by their incident memlet ids (sorted)."""
    for a in t.anchors:
        if a not in nest.node_ids:
            raise TransformError(f"anchor {a} not in nest")
    anchors = set(t.anchors)
    mems = sorted({m.id for m in nest.memlets if m.src in anchors or m.dst in anchors})
    return list(t.anchors) + mems


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceLimits:
    tile_sizes: tuple = (16, 32)
    vector_widths: tuple = (1, 4)
    chunk_sizes: tuple = (8,)
    parallel_threads: tuple = ()
    interchange: bool = True
    max_length: int = 3

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceLimits":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


SCHEDULE_ONLY = SpaceLimits(tile_sizes=(), vector_widths=(1,), chunk_sizes=(8,), interchange=False, max_length=1)


def _candidates(nest: LoopNest, limits: SpaceLimits, originals: list, tiled: set):
    """``(phase, key, transformation)`` triples in enumeration order."""
    out = []
    for m in nest.maps:
        if m.id in originals and m.id not in tiled:
            for s in sorted(set(limits.tile_sizes)):
                out.append((0, (originals.index(m.id), s), Transformation("tile", (m.id,), s)))
    if limits.interchange:
        n = nest.depth
        for a in range(n):
            for b in range(a + 1, n):
                out.append((1, (a, b), Transformation("interchange", (nest.maps[a].id, nest.maps[b].id))))
    for i, m in enumerate(nest.maps):
        for th in sorted(set(limits.parallel_threads)):
            out.append((2, (0,), Transformation("parallelize", (m.id,), th)))
    for m in nest.maps:
        if m.schedule.parallel:
            for arg in ["static"] + [f"dynamic:{c}" for c in sorted(set(limits.chunk_sizes))]:
                out.append((3, (0,), Transformation("set_schedule", (m.id,), arg)))
    inner = nest.maps[-1]
    for w in sorted(set(limits.vector_widths)):
        if w > 1:
            out.append((4, (0,), Transformation("vectorize", (inner.id,), w)))
    return out


def enumerate_space(nest: LoopNest, limits: SpaceLimits | None = None) -> Iterator[list[Transformation]]:
    """Depth-first stream of applicable sequences, starting with ``[]``.

    Steps follow the phase order tile, interchange, parallelize,
    set_schedule, vectorize. Within a phase keys increase strictly: each
    original map is tiled at most once, interchanged position pairs increase
    lexicographically, and the last three phases contribute one step each.
    """
    limits = limits or SpaceLimits()
    originals = [m.id for m in nest.maps]

    def go(cur: LoopNest, seq: list, last: tuple, tiled: set):
        yield list(seq)
        if len(seq) >= limits.max_length:
            return
        for phase, key, t in _candidates(cur, limits, originals, tiled):
            if (phase, key) <= last:
                continue
            if not applicable(t, cur):
                continue
            nxt = apply(t, cur)
            seq.append(t)
            yield from go(nxt, seq, (phase, key), tiled | ({t.maps[0]} if t.kind == "tile" else set()))
            seq.pop()

    yield from go(nest, [], (-1, ()), set())


def space_size(nest: LoopNest, limits: SpaceLimits | None = None) -> int:
    return sum(1 for _ in enumerate_space(nest, limits))
