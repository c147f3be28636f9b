# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel for the embedded-operator matvec.

Same contract as _pure.apply_plan: y += embed(A) @ x, with the embedding
described by support/environment offset tables.  x and y must be distinct
contiguous complex128 arrays.
"""

import numpy as np

cimport cython
from libc.stdint cimport int64_t


def apply_plan(const double complex[:, ::1] A,
               const double complex[::1] x,
               double complex[::1] y,
               const int64_t[::1] sup_offsets,
               const int64_t[::1] env_offsets):
    cdef Py_ssize_t m = sup_offsets.shape[0]
    cdef Py_ssize_t E = env_offsets.shape[0]
    cdef Py_ssize_t e, a, b
    cdef int64_t o
    cdef double complex acc
    with nogil:
        for e in range(E):
            o = env_offsets[e]
            for a in range(m):
                acc = 0
                for b in range(m):
                    acc = acc + A[a, b] * x[o + sup_offsets[b]]
                y[o + sup_offsets[a]] = y[o + sup_offsets[a]] + acc
    return np.asarray(y)
