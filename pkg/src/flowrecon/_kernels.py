"""Compiled inner loops for edge-weighted aggregation.

Both kernels walk a frozen dst-major CSR layout sequentially, so outputs are
bit-reproducible run to run. They exist because the equivalent numpy
gather/scatter expressions allocate edge-sized temporaries in the training
hot path; semantics are pinned against dense oracles in the test suite.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def weighted_neighbor_sum(indptr, src, data, x, out):
    """out[i] = sum_k data[k] * x[src[k]] over CSR row i (rows = dst)."""
    n = len(indptr) - 1
    f = x.shape[1]
    for i in range(n):
        for c in range(f):
            out[i, c] = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = src[k]
            w = data[k]
            for c in range(f):
                out[i, c] += w * x[j, c]
    return out


@numba.njit(cache=True)
def edge_dot(indptr, src, g, x, out):
    """out[k] = <g[dst[k]], x[src[k]]> for every edge slot k."""
    n = len(indptr) - 1
    f = x.shape[1]
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            j = src[k]
            acc = 0.0
            for c in range(f):
                acc += g[i, c] * x[j, c]
            out[k] = acc
    return out
