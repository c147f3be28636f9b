"""Embedded-operator matvec kernels.

The inner loop of every iterative eigensolve is `y += embed(A) @ x` for a
small operator matrix A acting on a few sites of a product space.  A compiled
extension (`_fast`) does this with explicit offset arithmetic; a numpy
fallback (`_pure`) does the same through fancy indexing.  The extension is
optional: if it failed to build, or LPPLAB_PURE_PYTHON=1 is set, the numpy
path is used.  Both consume the same precomputed EmbeddingPlan, so they can
be benchmarked against each other (see benchmarks/bench_kernels.py).
"""

import os

import numpy as np

from . import _pure

try:
    from . import _fast
except ImportError:
    _fast = None

if _fast is not None and os.environ.get("LPPLAB_PURE_PYTHON", "") != "1":
    BACKEND = "compiled"
else:
    BACKEND = "numpy"


class EmbeddingPlan:
    """Offset tables for applying an operator on `positions` to a state
    over sites of dimensions `dims` (site 0 is the slowest axis, matching
    the usual kron ordering).

    sup_offsets[a] is the flat-index contribution of local basis state `a`
    on the support; env_offsets[e] enumerates the configurations of the
    remaining sites.  Flat index = sup_offsets[a] + env_offsets[e].
    """

    def __init__(self, dims, positions):
        dims = tuple(int(d) for d in dims)
        positions = tuple(sorted(int(p) for p in positions))
        if len(set(positions)) != len(positions):
            raise ValueError("repeated site in support")
        if positions and not (0 <= positions[0] and positions[-1] < len(dims)):
            raise ValueError("support site out of range")
        strides = np.ones(len(dims), dtype=np.int64)
        for i in range(len(dims) - 2, -1, -1):
            strides[i] = strides[i + 1] * dims[i + 1]

        sup = np.zeros(1, dtype=np.int64)
        for p in positions:
            sup = (sup[:, None] + np.arange(dims[p], dtype=np.int64)[None, :] * strides[p]).ravel()
        env = np.zeros(1, dtype=np.int64)
        for p in range(len(dims)):
            if p not in positions:
                env = (env[:, None] + np.arange(dims[p], dtype=np.int64)[None, :] * strides[p]).ravel()

        self.dims = dims
        self.positions = positions
        self.sup_offsets = sup
        self.env_offsets = env
        self.m = int(sup.shape[0])
        self.dim = int(np.prod(dims, dtype=np.int64))
        self._idx = None

    @property
    def idx(self):
        # full (m, E) gather table, built on first use by the numpy backend
        if self._idx is None:
            self._idx = self.sup_offsets[:, None] + self.env_offsets[None, :]
        return self._idx


def apply_embedded(A, plan, x, y=None, backend=None):
    """Accumulate y += embed(A) @ x and return y.

    A is the (m, m) support matrix described by `plan`; x and y are state
    vectors of the full dimension.  y must not alias x.
    """
    A = np.ascontiguousarray(A, dtype=np.complex128)
    x = np.ascontiguousarray(x, dtype=np.complex128)
    if A.shape != (plan.m, plan.m):
        raise ValueError("operator shape does not match plan support")
    if x.shape != (plan.dim,):
        raise ValueError("state length does not match plan dimension")
    if y is None:
        y = np.zeros(plan.dim, dtype=np.complex128)
    which = backend or BACKEND
    if which == "compiled":
        _fast.apply_plan(A, x, y, plan.sup_offsets, plan.env_offsets)
    else:
        _pure.apply_plan(A, x, y, plan.sup_offsets, plan.env_offsets, plan.idx)
    return y
