"""Textual nest format.

A document is the header line ``perfembed-ir v1`` followed by a JSON object::

    perfembed-ir v1
    {
      "name": "copy",
      "arrays": [{"name": "A", "elem_type": "f64", "shape": [64], ...}, ...],
      "maps": [{"id": "m0", "params": ["i"], "level": 0,
                "extents": [{"begin": "0", "end": "64", "step": "1"}],
                "schedule": {"parallel": true, ...}}],
      "body": {"statements": "B[i] = A[i]"},
      "memlets": [{"id": "A0@0", "src": "in:A", "dst": "entry:m0", ...}, ...]
    }

Field names are those of the dataclasses in :mod:`perfembed.ir.nest`. A
dynamic extent is written with ``"begin": "dynamic", "end": "dynamic"`` and a
``binding`` ``{"array": "row_ptr", "index": "i"}`` meaning the range
``row_ptr[i] : row_ptr[i + 1]``. When ``memlets`` is omitted it is derived
from the body accesses.
"""
from __future__ import annotations

import json
from typing import Any

from .expr import IRSemanticError, IRSyntaxError
from .body import BodyInfo
from .nest import (
    Binding,
    Body,
    DataArray,
    Extent,
    LoopNest,
    MapScope,
    Memlet,
    ScheduleAnnotation,
    build_nest,
    validate,
)

HEADER = "perfembed-ir v1"


def parse_loopnest(text: str) -> LoopNest:
    """Parse and validate a nest document."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    first, _, rest = text.partition("\n")
    if first.strip() != HEADER:
        raise IRSyntaxError(f"missing header {HEADER!r}", 1, 1)
    try:
        doc = json.loads(rest)
    except json.JSONDecodeError as exc:
        raise IRSyntaxError(exc.msg, exc.lineno + 1, exc.colno) from None
    try:
        nest = _from_doc(doc)
    except IRSyntaxError as exc:
        raise _locate(exc, text) from None
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, IRSemanticError):
            raise
        raise IRSemanticError(f"malformed document: {exc}") from None
    problems = validate(nest)
    if problems:
        raise IRSemanticError("; ".join(str(p) for p in problems))
    return nest


def _locate(exc: IRSyntaxError, text: str) -> IRSyntaxError:
    """Translate an expression-local error into a document position."""
    msg = str(exc).split(" (line")[0]
    frag = msg.split("'")[1] if "'" in msg else None
    if frag:
        at = text.find(json.dumps(frag)[1:-1])
        if at >= 0:
            line = text.count("\n", 0, at) + 1
            col = at - (text.rfind("\n", 0, at) + 1) + 1
            return IRSyntaxError(msg, line, col)
    return IRSyntaxError(msg, exc.line, exc.column)


def _need(d: dict, key: str, where: str):
    if not isinstance(d, dict):
        raise IRSemanticError(f"{where}: expected an object")
    if key not in d:
        raise IRSemanticError(f"{where}: missing field {key!r}")
    return d[key]


def _from_doc(doc: Any) -> LoopNest:
    if not isinstance(doc, dict):
        raise IRSemanticError("document must be an object")
    arrays = []
    for a in _need(doc, "arrays", "nest"):
        name = _need(a, "name", "array")
        arrays.append(DataArray(
            name=name,
            elem_type=_need(a, "elem_type", f"array {name}"),
            shape=tuple(_need(a, "shape", f"array {name}")),
            strides=tuple(a["strides"]) if "strides" in a else None,
            bytes_per_element=a.get("bytes_per_element"),
            transient=bool(a.get("transient", False)),
            alignment=int(a.get("alignment", 64)),
            offset=int(a.get("offset", 0)),
            storage=a.get("storage", "heap"),
        ))
    maps = []
    for m in _need(doc, "maps", "nest"):
        mid = _need(m, "id", "map")
        exts = []
        for e in _need(m, "extents", f"map {mid}"):
            b = e.get("binding")
            exts.append(Extent(
                str(_need(e, "begin", f"map {mid} extent")),
                str(_need(e, "end", f"map {mid} extent")),
                str(e.get("step", "1")),
                Binding(str(_need(b, "array", "binding")), str(_need(b, "index", "binding"))) if b else None,
            ))
        s = m.get("schedule", {})
        sched = ScheduleAnnotation(
            parallel=bool(s.get("parallel", False)),
            assignment=s.get("assignment", "static"),
            chunk=s.get("chunk"),
            threads=int(s.get("threads", 1)),
            vector_width=int(s.get("vector_width", 1)),
        )
        maps.append(MapScope(mid, tuple(_need(m, "params", f"map {mid}")), tuple(exts),
                             int(m.get("level", len(maps))), sched))
    body = _need(doc, "body", "nest")
    statements = _need(body, "statements", "body")
    name = doc.get("name", "nest")
    BodyInfo(statements)  # raises located syntax errors before validation
    if "memlets" not in doc:
        derived = build_nest(name, arrays, maps, statements)
        return LoopNest(name, tuple(arrays), tuple(maps), Body(statements), derived.memlets)
    memlets = []
    for e in doc["memlets"]:
        mid = _need(e, "id", "memlet")
        memlets.append(Memlet(
            id=mid,
            src=_need(e, "src", f"memlet {mid}"),
            dst=_need(e, "dst", f"memlet {mid}"),
            array=_need(e, "array", f"memlet {mid}"),
            subscripts=tuple(_need(e, "subscripts", f"memlet {mid}")),
            direction=_need(e, "direction", f"memlet {mid}"),
            is_affine=bool(_need(e, "is_affine", f"memlet {mid}")),
            is_dynamic=bool(_need(e, "is_dynamic", f"memlet {mid}")),
            reduction=e.get("reduction"),
        ))
    return LoopNest(name, tuple(arrays), tuple(maps), Body(statements), tuple(memlets))


def to_doc(nest: LoopNest) -> dict:
    return {
        "name": nest.name,
        "arrays": [
            {
                "name": a.name, "elem_type": a.elem_type, "bytes_per_element": a.bytes_per_element,
                "shape": list(a.shape), "strides": list(a.strides), "transient": a.transient,
                "alignment": a.alignment, "offset": a.offset, "storage": a.storage,
            }
            for a in nest.arrays
        ],
        "maps": [
            {
                "id": m.id, "params": list(m.params), "level": m.level,
                "extents": [_extent_doc(e) for e in m.extents],
                "schedule": {
                    "parallel": m.schedule.parallel, "assignment": m.schedule.assignment,
                    "chunk": m.schedule.chunk, "threads": m.schedule.threads,
                    "vector_width": m.schedule.vector_width,
                },
            }
            for m in nest.maps
        ],
        "body": {"statements": nest.body.statements},
        "memlets": [
            {
                "id": e.id, "src": e.src, "dst": e.dst, "array": e.array,
                "subscripts": list(e.subscripts), "direction": e.direction,
                "is_affine": e.is_affine, "is_dynamic": e.is_dynamic, "reduction": e.reduction,
            }
            for e in nest.memlets
        ],
    }


def _extent_doc(e: Extent) -> dict:
    d = {"begin": e.begin, "end": e.end, "step": e.step}
    if e.binding is not None:
        d["binding"] = {"array": e.binding.array, "index": e.binding.index}
    return d


def serialize(nest: LoopNest) -> str:
    """Render a valid nest as a document; invalid nests are rejected."""
    problems = validate(nest)
    if problems:
        raise IRSemanticError("cannot serialize invalid nest: " + "; ".join(str(p) for p in problems))
    return HEADER + "\n" + json.dumps(to_doc(nest), indent=1) + "\n"
