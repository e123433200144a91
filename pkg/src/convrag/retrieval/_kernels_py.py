"""Numpy fallback for the compiled scoring kernels. Mirrors _kernels.pyx exactly."""

import numpy as np

KERNEL_NAME = "python"


def add_term_scores(scores, positions, tfs, idf, k1, doc_norms):
    """Accumulate one query term's contribution into per-document scores.

    Positions within one posting list are unique, so fancy-indexed += is safe.
    """
    f = tfs.astype(np.float64)
    scores[positions] += idf * f * (k1 + 1.0) / (f + doc_norms[positions])
