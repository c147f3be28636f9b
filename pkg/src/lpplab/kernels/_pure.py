"""Numpy fallback kernel: gather, small dense matmul, scatter."""

import numpy as np


def apply_plan(A, x, y, sup_offsets, env_offsets, idx=None):
    """y += embed(A) @ x with the embedding given by the offset tables.

    Every flat index appears exactly once in the gather table, so the
    fancy-indexed += has no collisions.
    """
    if idx is None:
        idx = sup_offsets[:, None] + env_offsets[None, :]
    y[idx] += A @ x[idx]
    return y
