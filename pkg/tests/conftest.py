import numpy as np
import pytest

from perfembed.corpus import KernelSpec, generate_kernel
from perfembed.ir import DataArray, build_nest, canonical_schedule, make_map


def copy_nest(n=16, dtype="f64"):
    arrays = [DataArray("A", dtype, (n,)), DataArray("B", dtype, (n,))]
    return build_nest("copy", arrays, [make_map("m0", "i", 0, n)], "B[i] = A[i]")


def matmul_nest(n=64, threads=4):
    arrays = [DataArray("A", "f64", (n, n)), DataArray("B", "f64", (n, n)), DataArray("C", "f64", (n, n))]
    maps = [make_map("m0", "i", 0, n), make_map("m1", "j", 0, n), make_map("m2", "k", 0, n)]
    return canonical_schedule(build_nest("matmul", arrays, maps, "C[i, j] += A[i, k] * B[k, j]"), threads)


@pytest.fixture
def copy():
    return copy_nest()


@pytest.fixture
def matmul():
    return matmul_nest()


@pytest.fixture
def spmv():
    return generate_kernel(KernelSpec("csr_spmv", {"rows": 100, "cols": 100, "nnz": 500}, 7))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
