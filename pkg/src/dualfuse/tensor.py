"""Shape-checked float64 kernels on numpy arrays.

Every kernel here has a plain-loop counterpart in the test suite; arrays are
always promoted to float64 so that oracle comparisons at 1e-12 are meaningful.
The softmax denominator and the matrix product reduce with ``math.fsum``; an
exactly rounded sum does not depend on term order, which keeps token pooling
bitwise invariant to sequence permutations.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _exact_sum_last(x: np.ndarray) -> np.ndarray:
    """Correctly rounded sum over the last axis."""
    flat = x.reshape(-1, x.shape[-1])
    return np.array([math.fsum(r) for r in flat], dtype=np.float64).reshape(x.shape[:-1])


def stack_new_axis(parts: Sequence[np.ndarray], axis_position: int = 0) -> np.ndarray:
    if len(parts) == 0:
        raise ShapeError("stack_new_axis needs at least one part")
    arrays = [as_tensor(p) for p in parts]
    ref = arrays[0].shape
    for i, a in enumerate(arrays[1:], start=1):
        if a.shape != ref:
            raise ShapeError(f"part {i} has shape {a.shape}, expected {ref}")
    if not 0 <= axis_position <= len(ref):
        raise ShapeError(f"axis_position {axis_position} outside [0, {len(ref)}]")
    return np.stack(arrays, axis=axis_position)


def abs_elem(x: np.ndarray) -> np.ndarray:
    return np.abs(as_tensor(x))


def reshape(x: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    x = as_tensor(x)
    new_shape = tuple(int(s) for s in new_shape)
    if sum(1 for s in new_shape if s == -1) > 1:
        raise ShapeError("at most one inferred dimension allowed")
    if any(s == 0 or s < -1 for s in new_shape):
        raise ShapeError(f"invalid target shape {new_shape}")
    known = int(np.prod([s for s in new_shape if s != -1], dtype=np.int64))
    if -1 in new_shape:
        if known == 0 or x.size % known:
            raise ShapeError(f"cannot reshape {x.shape} into {new_shape}")
    elif known != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {new_shape}")
    return x.reshape(new_shape)


def permute(x: np.ndarray, order: Sequence[int]) -> np.ndarray:
    x = as_tensor(x)
    order = tuple(int(o) for o in order)
    if sorted(order) != list(range(x.ndim)):
        raise ShapeError(f"{order} is not a permutation of {x.ndim} axes")
    # ascontiguousarray keeps the "row-major data" contract of the tensor type
    return np.ascontiguousarray(np.transpose(x, order))


def mean_over_axis(x: np.ndarray, axis: int) -> np.ndarray:
    x = as_tensor(x)
    if not 0 <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {x.ndim}")
    return x.mean(axis=axis)


def scaled_softmax_rows(x: np.ndarray, lam: float) -> np.ndarray:
    """Row-wise softmax of ``lam * x`` for a 2-D array, max-subtracted."""
    if not lam > 0:
        raise ValueError(f"softmax scale must be positive, got {lam}")
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"expected (rows, length), got shape {x.shape}")
    z = lam * x
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / _exact_sum_last(e)[:, None]


def argmax_axis(x: np.ndarray, axis: int) -> np.ndarray:
    # np.argmax returns the first maximal position, i.e. ties go to the lowest index
    x = as_tensor(x)
    if not 0 <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {x.ndim}")
    return np.argmax(x, axis=axis)


def gather_axis(candidates: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Select ``candidates[indices[idx], idx]`` for every position ``idx``."""
    candidates = as_tensor(candidates)
    indices = np.asarray(indices)
    if indices.shape != candidates.shape[1:]:
        raise ShapeError(
            f"indices shape {indices.shape} != candidate shape {candidates.shape[1:]}"
        )
    if not np.issubdtype(indices.dtype, np.integer):
        raise TypeError("indices must be integers")
    bad = (indices < 0) | (indices >= candidates.shape[0])
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise IndexError(f"index {int(indices[pos])} out of range at position {pos}")
    return np.take_along_axis(candidates, indices[None], axis=0)[0]


def spatial_smooth(x: np.ndarray, pool_factor: int) -> np.ndarray:
    """Average-pool (R, H, W) maps by ``pool_factor`` and nearest-upsample back."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected (R, H, W), got {x.shape}")
    f = int(pool_factor)
    r, h, w = x.shape
    if f < 1 or h % f or w % f:
        raise ValueError(f"pool_factor {pool_factor} must divide H={h} and W={w}")
    if f == 1:
        return x.copy()
    pooled = x.reshape(r, h // f, f, w // f, f).mean(axis=(2, 4))
    return np.repeat(np.repeat(pooled, f, axis=1), f, axis=2)


def matmul_batched(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim not in (2, 3):
        raise ShapeError(f"expected (B,M,K) @ (B,K,P) or (K,P), got {a.shape}, {b.shape}")
    if a.shape[2] != b.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} vs {b.shape}")
    if b.ndim == 3 and b.shape[0] != a.shape[0]:
        raise ShapeError(f"batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    if b.ndim == 2:
        b = np.broadcast_to(b, (a.shape[0],) + b.shape)
    # (B, M, 1, K) * (B, 1, P, K) -> exact sum over K
    terms = a[:, :, None, :] * np.swapaxes(b, 1, 2)[:, None, :, :]
    return _exact_sum_last(terms)
