# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-timestep counting kernel (single fused pass over users)."""
import numpy as np

cimport numpy as cnp

BACKEND_NAME = "cython"


def cell_counts(cnp.int32_t[::1] cells_t, cnp.int8_t[::1] comp,
                cnp.uint8_t[::1] quarantined, Py_ssize_t ncells):
    """Per-cell S/E/I/R counts over non-quarantined users; (4, ncells) int64."""
    out = np.zeros((4, ncells), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] o = out
    cdef Py_ssize_t u, n = cells_t.shape[0]
    cdef int code
    with nogil:
        for u in range(n):
            if quarantined[u]:
                continue
            code = comp[u]
            o[code, cells_t[u]] += 1
    return out
