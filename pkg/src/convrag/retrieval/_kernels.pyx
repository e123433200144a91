# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernels. Mirrors _kernels_py exactly; keep in sync."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

KERNEL_NAME = "cython"


def add_term_scores(
    double[::1] scores,
    cnp.int32_t[::1] positions,
    cnp.int32_t[::1] tfs,
    double idf,
    double k1,
    double[::1] doc_norms,
):
    """Accumulate one query term's contribution into per-document scores.

    doc_norms[i] holds k1 * (1 - b + b * dl_i / avgdl), precomputed at build
    time so the inner loop is a fused multiply-add per posting.
    """
    cdef Py_ssize_t j, n = positions.shape[0]
    cdef cnp.int32_t p
    cdef double f
    for j in range(n):
        p = positions[j]
        f = tfs[j]
        scores[p] += idf * f * (k1 + 1.0) / (f + doc_norms[p])
