"""Synthetic kernel corpus, sparse matrices and dataset generation."""
from .kernels import KINDS, KernelError, KernelSpec, csr_spmm_nest, csr_spmv_nest, generate_kernel
from .dataset import (DEFAULT_COUNTS, DEFAULT_SIZE_RANGES, SPLITS, CorpusEntry, dataset_specs,
                      generate_dataset, label_dataset, label_entries, load_corpus, sample_spec)
from .sparse import MatrixMarketError, SparseMatrixCSR, load_matrix_market, synthetic_csr

__all__ = [
    "DEFAULT_COUNTS", "DEFAULT_SIZE_RANGES", "SPLITS", "CorpusEntry", "dataset_specs", "generate_dataset",
    "label_dataset", "label_entries", "load_corpus", "sample_spec",
    "KINDS", "KernelError", "KernelSpec", "csr_spmm_nest", "csr_spmv_nest", "generate_kernel",
    "MatrixMarketError", "SparseMatrixCSR", "load_matrix_market", "synthetic_csr",
]
