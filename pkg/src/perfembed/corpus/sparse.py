"""CSR matrices: synthetic generation and Matrix Market ingestion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class MatrixMarketError(ValueError):
    pass


@dataclass
class SparseMatrixCSR:
    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def check(self) -> None:
        rp = self.row_ptr
        if len(rp) != self.rows + 1 or rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must start at 0 and be nondecreasing with rows + 1 entries")
        if rp[-1] != len(self.col_idx) or len(self.col_idx) != len(self.values):
            raise ValueError("row_ptr[rows] must equal nnz")
        if len(self.col_idx) and (self.col_idx.min() < 0 or self.col_idx.max() >= self.cols):
            raise ValueError("column index out of range")

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrixCSR":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr.astype(np.int64), m.indices.astype(np.int64),
                   m.data.astype(np.float64))

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_ptr)


def synthetic_csr(rows: int, cols: int, nnz: int, powerlaw: float = 0.0, seed: int = 0) -> SparseMatrixCSR:
    """Random CSR matrix with about ``nnz`` nonzeros.

    ``powerlaw == 0`` gives (nearly) equal row lengths. A positive exponent
    gives row lengths proportional to ``(r + 1) ** -powerlaw`` in row order,
    so the heavy rows cluster at the top as in degree-sorted graphs.
    """
    rng = np.random.default_rng(seed)
    if powerlaw > 0:
        w = (np.arange(rows) + 1.0) ** -powerlaw
        lengths = np.maximum(1, np.floor(w / w.sum() * nnz)).astype(np.int64)
    else:
        lengths = np.full(rows, nnz // rows, dtype=np.int64)
        lengths[: nnz % rows] += 1
    lengths = np.minimum(lengths, cols)
    row_ptr = np.zeros(rows + 1, dtype=np.int64)
    row_ptr[1:] = np.cumsum(lengths)
    col_idx = np.empty(row_ptr[-1], dtype=np.int64)
    for r in range(rows):
        col_idx[row_ptr[r]:row_ptr[r + 1]] = np.sort(rng.choice(cols, size=lengths[r], replace=False))
    values = rng.random(row_ptr[-1]) + 0.5
    m = SparseMatrixCSR(rows, cols, row_ptr, col_idx, values)
    m.check()
    return m


def load_matrix_market(path) -> SparseMatrixCSR:
    """Read a coordinate Matrix Market file (real, integer or pattern;
    general or symmetric). Duplicates are summed, symmetric inputs expanded
    and pattern entries valued 1.0."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].lower().startswith("%%matrixmarket"):
        raise MatrixMarketError("malformed header: missing %%MatrixMarket banner")
    banner = lines[0].split()
    if len(banner) != 5 or banner[1].lower() != "matrix":
        raise MatrixMarketError(f"malformed header: {lines[0]!r}")
    fmt, field, symmetry = (x.lower() for x in banner[2:])
    if fmt != "coordinate":
        raise MatrixMarketError(f"unsupported format: {fmt}")
    if field not in ("real", "integer", "pattern", "double"):
        raise MatrixMarketError(f"unsupported field: {field}")
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry: {symmetry}")
    body = [ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise MatrixMarketError("malformed header: missing size line")
    try:
        rows, cols, count = (int(x) for x in body[0].split())
    except ValueError:
        raise MatrixMarketError(f"malformed size line: {body[0]!r}") from None
    entries = body[1:]
    if len(entries) != count:
        raise MatrixMarketError(f"expected {count} entries, found {len(entries)}")
    want = 2 if field == "pattern" else 3
    r = np.empty(count, dtype=np.int64)
    c = np.empty(count, dtype=np.int64)
    v = np.ones(count, dtype=np.float64)
    for k, ln in enumerate(entries):
        parts = ln.split()
        if len(parts) < want:
            raise MatrixMarketError(f"malformed entry line {ln!r}")
        r[k], c[k] = int(parts[0]) - 1, int(parts[1]) - 1
        if field != "pattern":
            v[k] = float(parts[2])
    if count and (r.min() < 0 or c.min() < 0 or r.max() >= rows or c.max() >= cols):
        raise MatrixMarketError("index out of bounds")
    if symmetry == "symmetric":
        off = r != c
        r, c, v = np.concatenate([r, c[off]]), np.concatenate([c, r[off]]), np.concatenate([v, v[off]])
    m = SparseMatrixCSR.from_scipy(sp.coo_matrix((v, (r, c)), shape=(rows, cols)))
    m.check()
    return m
