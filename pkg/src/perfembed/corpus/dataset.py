"""Corpus datasets: generation to disk, labeling by simulation, loading.

Layout of a corpus directory::

    manifest.json          entries (id, split, kind, spec, nest, bindings) + size ranges
    nests/<id>.ir          serialized nest
    bindings/<id>/         InputBindings (manifest.json + .bin blobs)
    machine.json           machine the labels were measured on
    labels.npz             profiles (n, 95) and targets (n, 20), in manifest order
    profiles.csv, targets.csv
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ir import LoopNest, parse_loopnest, serialize
from ..simprof import (DESK_MACHINE, PROFILE_COLUMNS, TARGETS, InputBindings, MachineConfig, export_csv, measure)
from .kernels import KINDS, VARIANTS, KernelSpec, generate_kernel

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_COUNTS = {"train": 300, "val": 60, "test": 60}

# inclusive ranges per "kind:variant"; chosen so every nest simulates well under 1 s
_SMALL2D = {"N": (16, 80), "M": (16, 80)}
DEFAULT_SIZE_RANGES: dict[str, dict[str, tuple[int, int]]] = {
    "map:0": {"N": (512, 8192)},
    "map:1": _SMALL2D,
    "map:2": _SMALL2D,
    "map:3": {"N": (512, 8192)},
    "map:4": {"N": (256, 4096), "stride": (2, 8)},
    "reduction:0": {"N": (16, 96), "M": (16, 96)},
    "reduction:1": {"N": (16, 96), "M": (16, 96)},
    "reduction:2": {"N": (16, 96), "M": (16, 96)},
    "reduction:3": {"N": (16, 96), "M": (16, 96)},
    "stencil:0": {"N": (256, 8192)},
    "stencil:1": _SMALL2D,
    "stencil:2": _SMALL2D,
    "matmul:0": {"M": (8, 40), "N": (8, 40), "K": (8, 40)},
    "matmul:1": {"M": (8, 40), "N": (8, 40), "K": (8, 40)},
    "minplus_matmul:0": {"M": (8, 40), "N": (8, 40), "K": (8, 40)},
    "boolean_mask:0": {"N": (512, 8192), "density": (5, 95)},
    "boolean_mask:1": {"N": (512, 8192), "density": (5, 95)},
    "boolean_mask:2": {"N": (16, 80), "M": (16, 64), "density": (5, 95)},
    "csr_spmm:0": {"rows": (32, 256), "cols": (32, 256), "degree": (2, 12), "K": (4, 32), "powerlaw": (0, 20)},
    "csr_spmm:1": {"rows": (32, 256), "cols": (32, 256), "degree": (2, 12), "K": (4, 32), "powerlaw": (0, 20)},
    "csr_spmv:0": {"rows": (64, 1024), "cols": (64, 1024), "degree": (2, 16), "powerlaw": (0, 20)},
    "csr_spmv:1": {"rows": (64, 1024), "cols": (64, 1024), "degree": (2, 16), "powerlaw": (0, 20)},
    "prime_filter:0": {"n": (256, 4096)},
    "prime_filter:1": {"n": (256, 4096)},
    "blur:0": _SMALL2D,
    "blur:1": _SMALL2D,
    "histogram:0": {"N": (512, 8192), "bins": (8, 64)},
    "histogram:1": {"N": (16, 128), "M": (8, 64), "bins": (4, 32)},
}


def sample_spec(kind: str, rng: np.random.Generator, size_ranges=None) -> KernelSpec:
    """Draw a random spec of ``kind`` (variant, sizes, dtype, seed)."""
    ranges = DEFAULT_SIZE_RANGES if size_ranges is None else size_ranges
    variant = int(rng.integers(VARIANTS[kind]))
    sizes = {k: int(rng.integers(lo, hi + 1)) for k, (lo, hi) in ranges[f"{kind}:{variant}"].items()}
    if "degree" in sizes:
        # the generators take a nonzero count; degree is the sampling knob
        sizes["nnz"] = sizes["rows"] * min(sizes.pop("degree"), sizes["cols"])
    sizes["variant"] = variant
    sizes["vector"] = int(rng.choice([1, 2, 4, 8]))
    dtype = "f32" if rng.random() < 0.5 else "f64"
    return KernelSpec(kind, sizes, int(rng.integers(1 << 62)), dtype)


def dataset_specs(counts=None, size_ranges=None, seed: int = 0) -> list[tuple[str, KernelSpec]]:
    """Deterministic ``(split, spec)`` list. Kinds cycle within each split so
    every split of at least |kinds| nests covers all kinds; specs whose nest
    text repeats an earlier one are redrawn so no nest appears twice."""
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    for s in SPLITS:
        if counts.get(s, 0) < 1:
            raise ValueError(f"count for split {s!r} must be >= 1")
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    out = []
    for split in SPLITS:
        order = list(KINDS)
        for i in range(counts[split]):
            if i % len(order) == 0:
                rng.shuffle(order)
            kind = order[i % len(order)]
            for _ in range(1000):
                spec = sample_spec(kind, rng, size_ranges)
                key = serialize(generate_kernel(spec)[0])
                if key not in seen:
                    break
            else:
                raise RuntimeError(f"could not draw a distinct {kind} nest")
            seen.add(key)
            out.append((split, spec))
    return out


def generate_dataset(out_dir, counts=None, size_ranges=None, seed: int = 0, threads: int = 4) -> Path:
    """Write a corpus to ``out_dir`` and return the manifest path."""
    out = Path(out_dir)
    (out / "nests").mkdir(parents=True, exist_ok=True)
    (out / "bindings").mkdir(exist_ok=True)
    entries = []
    for n, (split, spec) in enumerate(dataset_specs(counts, size_ranges, seed)):
        nid = f"{split}-{n:05d}-{spec.kind}"
        nest, inputs = generate_kernel(spec, threads)
        (out / "nests" / f"{nid}.ir").write_text(serialize(nest), encoding="utf-8")
        inputs.save(out / "bindings" / nid)
        entries.append({"id": nid, "split": split, "kind": spec.kind, "spec": spec.to_dict(),
                        "nest": f"nests/{nid}.ir", "bindings": f"bindings/{nid}"})
    ranges = DEFAULT_SIZE_RANGES if size_ranges is None else size_ranges
    manifest = {"format": "perfembed-corpus v1", "seed": int(seed), "threads": threads,
                "size_ranges": {k: {p: list(r) for p, r in v.items()} for k, v in ranges.items()},
                "entries": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


@dataclass
class CorpusEntry:
    id: str
    split: str
    kind: str
    spec: KernelSpec
    nest: LoopNest
    inputs: InputBindings
    profile: np.ndarray | None = None
    targets: np.ndarray | None = None


def _manifest_path(path) -> Path:
    p = Path(path)
    return p / "manifest.json" if p.is_dir() else p


def load_corpus(path, splits=SPLITS) -> list[CorpusEntry]:
    """Load manifest entries (with labels when ``labels.npz`` exists)."""
    mpath = _manifest_path(path)
    root = mpath.parent
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    labels = None
    if (root / "labels.npz").exists():
        with np.load(root / "labels.npz") as z:
            labels = {str(i): (p, t) for i, p, t in zip(z["ids"], z["profiles"], z["targets"])}
    out = []
    for e in manifest["entries"]:
        if e["split"] not in splits:
            continue
        nest = parse_loopnest((root / e["nest"]).read_text(encoding="utf-8"))
        entry = CorpusEntry(e["id"], e["split"], e["kind"], KernelSpec.from_dict(e["spec"]), nest,
                            InputBindings.load(root / e["bindings"]))
        if labels is not None and e["id"] in labels:
            entry.profile, entry.targets = labels[e["id"]]
        out.append(entry)
    return out


def label_entries(entries: list[CorpusEntry], machine: MachineConfig | None = None) -> None:
    """Fill ``profile`` and ``targets`` of every entry by measurement
    (default machine: ``DESK_MACHINE``)."""
    machine = machine or DESK_MACHINE
    for k, e in enumerate(entries):
        e.profile, e.targets = measure(e.nest, e.inputs, machine)
        if (k + 1) % 50 == 0:
            log.info("labeled %d/%d", k + 1, len(entries))


def label_dataset(path, machine: MachineConfig | None = None) -> Path:
    """Measure every nest of a corpus; writes labels.npz and the CSV exports."""
    mpath = _manifest_path(path)
    root = mpath.parent
    entries = load_corpus(mpath)
    machine = machine or DESK_MACHINE
    label_entries(entries, machine)
    (root / "machine.json").write_text(json.dumps(machine.to_dict(), sort_keys=True, indent=1))
    ids = np.array([e.id for e in entries])
    profiles = np.stack([e.profile for e in entries])
    targets = np.stack([e.targets for e in entries])
    np.savez(root / "labels.npz", ids=ids, profiles=profiles, targets=targets)
    export_csv(root / "profiles.csv", list(zip(ids, profiles)), PROFILE_COLUMNS)
    export_csv(root / "targets.csv", list(zip(ids, targets)), TARGETS)
    return root / "labels.npz"
