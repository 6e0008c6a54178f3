"""Loop-nest intermediate representation."""
from .body import Access, BodyInfo
from .expr import IRError, IRSemanticError, IRSyntaxError
from .nest import (
    Binding,
    Body,
    DataArray,
    Extent,
    LoopNest,
    MapScope,
    Memlet,
    ScheduleAnnotation,
    Violation,
    build_nest,
    canonical_schedule,
    make_map,
    memlet_level,
    memlet_scope,
    node_kind,
    validate,
)
from .text import HEADER, parse_loopnest, serialize

__all__ = [
    "Access", "BodyInfo", "IRError", "IRSemanticError", "IRSyntaxError", "Binding", "Body",
    "DataArray", "Extent", "LoopNest", "MapScope", "Memlet", "ScheduleAnnotation", "Violation",
    "build_nest", "canonical_schedule", "make_map", "memlet_level", "memlet_scope", "node_kind",
    "validate", "HEADER", "parse_loopnest", "serialize",
]
