"""Kernel generators.

Each generator turns a :class:`KernelSpec` into a canonically scheduled nest
plus seeded input arrays. ``sizes`` holds the named integer parameters of a
kind; the optional ``variant`` size selects among structural variants and
the optional ``vector`` size (1, 2, 4 or 8) vectorizes the innermost inner map
when that is legal, standing in for compiler auto-vectorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ir import Binding, DataArray, Extent, MapScope, canonical_schedule, make_map
from ..ir.nest import build_nest
from ..simprof import InputBindings
from ..transform import Transformation, applicable, apply
from .sparse import SparseMatrixCSR, synthetic_csr

KINDS = ("map", "reduction", "stencil", "matmul", "minplus_matmul", "boolean_mask", "csr_spmm",
         "csr_spmv", "prime_filter", "blur", "histogram")

# required size parameters per kind, and the number of structural variants
REQUIRED = {
    "map": ("N",),
    "reduction": ("N", "M"),
    "stencil": ("N",),
    "matmul": ("M", "N", "K"),
    "minplus_matmul": ("M", "N", "K"),
    "boolean_mask": ("N",),
    "csr_spmm": ("rows", "cols", "nnz", "K"),
    "csr_spmv": ("rows", "cols", "nnz"),
    "prime_filter": ("n",),
    "blur": ("N", "M"),
    "histogram": ("N", "bins"),
}
VARIANTS = {"map": 5, "reduction": 4, "stencil": 3, "matmul": 2, "minplus_matmul": 1, "boolean_mask": 3,
            "csr_spmm": 2, "csr_spmv": 2, "prime_filter": 2, "blur": 2, "histogram": 2}


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    sizes: dict = field(default_factory=dict)
    seed: int = 0
    dtype: str = "f64"

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.sizes.items())), self.seed, self.dtype))

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise KernelError(f"unsupported kind {self.kind!r}")
        if self.dtype not in ("f32", "f64"):
            raise KernelError(f"unsupported dtype {self.dtype!r}")
        missing = [k for k in REQUIRED[self.kind] if k not in self.sizes]
        if missing:
            raise KernelError(f"{self.kind}: missing size parameters {missing}")
        for k, v in self.sizes.items():
            if not isinstance(v, (int, np.integer)) or v < (0 if k in ("variant", "powerlaw") else 1):
                raise KernelError(f"{self.kind}: size {k} must be a positive integer")
        if self.sizes.get("variant", 0) >= VARIANTS[self.kind]:
            raise KernelError(f"{self.kind}: variant must be < {VARIANTS[self.kind]}")
        if self.sizes.get("vector", 1) not in (1, 2, 4, 8):
            raise KernelError(f"{self.kind}: vector must be 1, 2, 4 or 8")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sizes": dict(self.sizes), "seed": int(self.seed), "dtype": self.dtype}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["kind"], {k: int(v) for k, v in d["sizes"].items()}, int(d["seed"]), d["dtype"])


def _rand(rng, shape, dtype):
    return rng.random(shape).astype(np.float32 if dtype == "f32" else np.float64)


def generate_kernel(spec: KernelSpec, threads: int = 4):
    """Return ``(nest, inputs)`` for ``spec``, canonically scheduled."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    gen = globals()[f"_gen_{spec.kind}"]
    name, arrays, maps, body, inputs = gen(spec.sizes, spec.dtype, rng)
    nest = canonical_schedule(build_nest(name, arrays, maps, body), threads)
    width = spec.sizes.get("vector", 1)
    if width > 1 and nest.depth > 1:
        t = Transformation("vectorize", (nest.maps[-1].id,), width)
        if applicable(t, nest):
            nest = apply(t, nest)
    return nest, InputBindings(inputs)


def _f(name, dtype, shape, **kw):
    return DataArray(name, dtype, tuple(shape), **kw)


def _gen_map(s, dt, rng):
    v, n = s.get("variant", 0), s["N"]
    m = s.get("M", n)
    if v == 0:
        arrays = [_f("A", dt, (n,)), _f("B", dt, (n,))]
        return "map_axpb", arrays, [make_map("m0", "i", 0, n)], "B[i] = A[i] * 2.0 + 1.0", {"A": _rand(rng, n, dt)}
    if v == 1:
        arrays = [_f("A", dt, (n, m)), _f("C", dt, (n, m)), _f("B", dt, (n, m))]
        maps = [make_map("m0", "i", 0, n), make_map("m1", "j", 0, m)]
        return "map_add2d", arrays, maps, "B[i, j] = A[i, j] + C[i, j]", {
            "A": _rand(rng, (n, m), dt), "C": _rand(rng, (n, m), dt)}
    if v == 2:
        arrays = [_f("A", dt, (m, n)), _f("B", dt, (n, m))]
        maps = [make_map("m0", "i", 0, n), make_map("m1", "j", 0, m)]
        return "map_transpose", arrays, maps, "B[i, j] = A[j, i]", {"A": _rand(rng, (m, n), dt)}
    if v == 3:
        arrays = [_f("A", dt, (n,)), _f("B", dt, (n,))]
        return "map_sqrt", arrays, [make_map("m0", "i", 0, n)], "B[i] = sqrt(abs(A[i] - 0.5))", {
            "A": _rand(rng, n, dt)}
    stride = s.get("stride", 4)
    arrays = [_f("A", dt, (n * stride,)), _f("B", dt, (n,))]
    return "map_strided", arrays, [make_map("m0", "i", 0, n)], f"B[i] = A[{stride} * i] * 3.0", {
        "A": _rand(rng, n * stride, dt)}


def _gen_reduction(s, dt, rng):
    v, n, m = s.get("variant", 0), s["N"], s["M"]
    if v == 0:
        arrays = [_f("A", dt, (n, m)), _f("out", dt, (n,))]
        maps = [make_map("m0", "i", 0, n), make_map("m1", "j", 0, m)]
        return "rowsum", arrays, maps, "out[i] += A[i, j]", {"A": _rand(rng, (n, m), dt)}
    if v == 1:
        arrays = [_f("A", dt, (m, n)), _f("out", dt, (n,))]
        maps = [make_map("m0", "j", 0, n), make_map("m1", "i", 0, m)]
        return "colsum", arrays, maps, "out[j] += A[i, j]", {"A": _rand(rng, (m, n), dt)}
    if v == 2:
        arrays = [_f("A", dt, (n, m)), _f("out", dt, (n,))]
        maps = [make_map("m0", "i", 0, n), make_map("m1", "j", 0, m)]
        return "rowmin", arrays, maps, "out[i] = min(out[i], A[i, j])", {
            "A": _rand(rng, (n, m), dt), "out": np.full(n, 2.0, dtype=np.float32 if dt == "f32" else np.float64)}
    arrays = [_f("A", dt, (n, m)), _f("B", dt, (n, m)), _f("out", dt, (n,))]
    maps = [make_map("m0", "i", 0, n), make_map("m1", "j", 0, m)]
    return "rowdot", arrays, maps, "out[i] += A[i, j] * B[i, j]", {
        "A": _rand(rng, (n, m), dt), "B": _rand(rng, (n, m), dt)}


def _gen_stencil(s, dt, rng):
    v, n = s.get("variant", 0), s["N"]
    if v == 0:
        arrays = [_f("A", dt, (n,)), _f("B", dt, (n,))]
        return "jacobi1d", arrays, [make_map("m0", "i", 1, n - 1)], \
            "B[i] = 0.33333 * (A[i - 1] + A[i] + A[i + 1])", {"A": _rand(rng, n, dt)}
    m = s.get("M", n)
    arrays = [_f("A", dt, (n, m)), _f("B", dt, (n, m))]
    maps = [make_map("m0", "i", 1, n - 1), make_map("m1", "j", 1, m - 1)]
    if v == 1:
        body = "B[i, j] = 0.2 * (A[i, j] + A[i - 1, j] + A[i + 1, j] + A[i, j - 1] + A[i, j + 1])"
        return "jacobi2d", arrays, maps, body, {"A": _rand(rng, (n, m), dt)}
    # column-major sweep of the same five-point stencil
    maps = [make_map("m0", "j", 1, m - 1), make_map("m1", "i", 1, n - 1)]
    body = "B[i, j] = 0.2 * (A[i, j] + A[i - 1, j] + A[i + 1, j] + A[i, j - 1] + A[i, j + 1])"
    return "jacobi2d_colmajor", arrays, maps, body, {"A": _rand(rng, (n, m), dt)}


def _gen_matmul(s, dt, rng):
    M, N, K = s["M"], s["N"], s["K"]
    arrays = [_f("A", dt, (M, K)), _f("B", dt, (K, N)), _f("C", dt, (M, N))]
    if s.get("variant", 0) == 0:
        maps = [make_map("m0", "i", 0, M), make_map("m1", "j", 0, N), make_map("m2", "k", 0, K)]
    else:
        maps = [make_map("m0", "i", 0, M), make_map("m1", "k", 0, K), make_map("m2", "j", 0, N)]
    return "matmul", arrays, maps, "C[i, j] += A[i, k] * B[k, j]", {
        "A": _rand(rng, (M, K), dt), "B": _rand(rng, (K, N), dt)}


def _gen_minplus_matmul(s, dt, rng):
    M, N, K = s["M"], s["N"], s["K"]
    arrays = [_f("A", dt, (M, K)), _f("B", dt, (K, N)), _f("C", dt, (M, N))]
    maps = [make_map("m0", "i", 0, M), make_map("m1", "j", 0, N), make_map("m2", "k", 0, K)]
    big = np.full((M, N), 1e9, dtype=np.float32 if dt == "f32" else np.float64)
    return "minplus", arrays, maps, "C[i, j] = min(C[i, j], A[i, k] + B[k, j])", {
        "A": _rand(rng, (M, K), dt), "B": _rand(rng, (K, N), dt), "C": big}


def _gen_boolean_mask(s, dt, rng):
    v, n = s.get("variant", 0), s["N"]
    density = s.get("density", 50) / 100.0
    mask = rng.random(n) < density
    if v == 2:
        m = s.get("M", 32)
        mask2 = rng.random((n, m)) < density
        arrays = [_f("A", dt, (n, m)), _f("M", "bool", (n, m)), _f("B", dt, (n, m))]
        maps = [make_map("m0", "i", 0, n), make_map("m1", "j", 0, m)]
        body = "B[i, j] = A[i, j] if M[i, j] else -A[i, j]"
        return "mask2d", arrays, maps, body, {"A": _rand(rng, (n, m), dt), "M": mask2}
    arrays = [_f("A", dt, (n,)), _f("M", "bool", (n,)), _f("B", dt, (n,))]
    if v == 0:
        body = "if M[i]:\n    B[i] = A[i] * 2.0\nelse:\n    B[i] = 0.0"
        return "mask_select", arrays, [make_map("m0", "i", 0, n)], body, {"A": _rand(rng, n, dt), "M": mask}
    # threshold on the data itself
    arrays = [_f("A", dt, (n,)), _f("B", dt, (n,))]
    t = s.get("density", 50) / 100.0
    body = f"if A[i] > {1.0 - t}:\n    B[i] = A[i] * A[i]"
    return "mask_threshold", arrays, [make_map("m0", "i", 0, n)], body, {"A": _rand(rng, n, dt)}


def _csr_from(s, rng) -> SparseMatrixCSR:
    return synthetic_csr(s["rows"], s["cols"], s["nnz"], powerlaw=s.get("powerlaw", 0) / 10.0,
                         seed=int(rng.integers(1 << 31)))


def _csr_arrays(csr: SparseMatrixCSR, dt):
    nnz = int(csr.row_ptr[-1])
    arrays = [
        DataArray("row_ptr", "i32", (csr.rows + 1,)),
        DataArray("col_idx", "i32", ("dynamic",)),
        DataArray("vals", dt, ("dynamic",)),
    ]
    inputs = {"row_ptr": csr.row_ptr.astype(np.int32), "col_idx": csr.col_idx.astype(np.int32),
              "vals": csr.values.astype(np.float32 if dt == "f32" else np.float64)}
    return arrays, inputs, nnz


def _dyn_map(map_id, param, outer):
    return MapScope(map_id, (param,), (Extent("dynamic", "dynamic", "1", Binding("row_ptr", outer)),), 0)


def csr_spmm_nest(csr: SparseMatrixCSR, K: int, dt: str = "f64", variant: int = 0, seed: int = 0):
    """SpMM ``C = A_csr @ B`` with ``K`` dense columns; variant 0 iterates the
    dense column outside the nonzeros (strided ``B`` access), variant 1 inside."""
    rng = np.random.default_rng(seed)
    arrays, inputs, _ = _csr_arrays(csr, dt)
    arrays += [_f("B", dt, (csr.cols, K)), _f("C", dt, (csr.rows, K))]
    inputs["B"] = _rand(rng, (csr.cols, K), dt)
    if variant == 0:
        maps = [make_map("m0", "i", 0, csr.rows), make_map("m1", "k", 0, K), _dyn_map("m2", "j", "i")]
    else:
        maps = [make_map("m0", "i", 0, csr.rows), _dyn_map("m1", "j", "i"), make_map("m2", "k", 0, K)]
    return "csr_spmm", arrays, maps, "C[i, k] += vals[j] * B[col_idx[j], k]", inputs


def _gen_csr_spmm(s, dt, rng):
    csr = _csr_from(s, rng)
    return csr_spmm_nest(csr, s["K"], dt, s.get("variant", 0), int(rng.integers(1 << 31)))


def csr_spmv_nest(csr: SparseMatrixCSR, dt: str = "f64", variant: int = 0, seed: int = 0):
    rng = np.random.default_rng(seed)
    arrays, inputs, _ = _csr_arrays(csr, dt)
    arrays += [_f("x", dt, (csr.cols,)), _f("y", dt, (csr.rows,))]
    inputs["x"] = _rand(rng, csr.cols, dt)
    maps = [make_map("m0", "i", 0, csr.rows), _dyn_map("m1", "j", "i")]
    body = "y[i] += vals[j] * x[col_idx[j]]" if variant == 0 else "y[i] = max(y[i], vals[j] * x[col_idx[j]])"
    return "csr_spmv", arrays, maps, body, inputs


def _gen_csr_spmv(s, dt, rng):
    csr = _csr_from(s, rng)
    return csr_spmv_nest(csr, dt, s.get("variant", 0), int(rng.integers(1 << 31)))


PRIME_BODY = """v = A[i]
p = v > 1
for d in range(2, v):
    if d * d > v:
        break
    if v % d == 0:
        p = False
        break
B[i] = p"""


def _gen_prime_filter(s, dt, rng):
    n = s["n"]
    start = int(rng.integers(0, 1000))
    if s.get("variant", 0) == 0:
        values = np.arange(start, start + n, dtype=np.int64)
    else:
        values = rng.integers(2, start + 2 * n + 3, size=n)
    arrays = [DataArray("A", "i64", (n,)), DataArray("B", "bool", (n,))]
    return "prime_filter", arrays, [make_map("m0", "i", 0, n)], PRIME_BODY, {"A": values}


def _gen_blur(s, dt, rng):
    n, m = s["N"], s["M"]
    arrays = [_f("A", dt, (n, m)), _f("B", dt, (n, m))]
    maps = [make_map("m0", "i", 1, n - 1), make_map("m1", "j", 1, m - 1)]
    if s.get("variant", 0) == 0:
        terms = " + ".join(f"A[i + {di}, j + {dj}]".replace("+ -", "- ") for di in (-1, 0, 1) for dj in (-1, 0, 1))
        body = f"B[i, j] = ({terms}) / 9.0"
    else:
        body = ("B[i, j] = 0.25 * A[i, j] + 0.125 * (A[i - 1, j] + A[i + 1, j] + A[i, j - 1] + A[i, j + 1])"
                " + 0.0625 * (A[i - 1, j - 1] + A[i - 1, j + 1] + A[i + 1, j - 1] + A[i + 1, j + 1])")
    return "blur", arrays, maps, body, {"A": _rand(rng, (n, m), dt)}


def _gen_histogram(s, dt, rng):
    n, bins = s["N"], s["bins"]
    if s.get("variant", 0) == 0:
        arrays = [_f("A", dt, (n,)), DataArray("H", "f64", (bins,))]
        body = f"b = int(A[i] * {float(bins)})\nH[b] += 1.0"
        return "histogram", arrays, [make_map("m0", "i", 0, n)], body, {"A": _rand(rng, n, dt)}
    m = s.get("M", 16)
    arrays = [_f("A", dt, (n, m)), DataArray("H", "f64", (n, bins))]
    maps = [make_map("m0", "i", 0, n), make_map("m1", "j", 0, m)]
    body = f"b = int(A[i, j] * {float(bins)})\nH[i, b] += 1.0"
    return "histogram_rows", arrays, maps, body, {"A": _rand(rng, (n, m), dt)}
