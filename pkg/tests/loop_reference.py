"""Plain-Python loop versions of the tensor kernels, used only as test oracles."""
import itertools
import math

import numpy as np


def indices(shape):
    return itertools.product(*(range(s) for s in shape))


def stack(parts, axis):
    shape = list(parts[0].shape)
    out_shape = shape[:axis] + [len(parts)] + shape[axis:]
    out = np.empty(out_shape)
    for idx in indices(out_shape):
        j = idx[axis]
        out[idx] = parts[j][idx[:axis] + idx[axis + 1:]]
    return out


def absolute(x):
    out = np.empty_like(x)
    for idx in indices(x.shape):
        v = x[idx]
        out[idx] = -v if v < 0 else v
    return out


def permute(x, order):
    out = np.empty([x.shape[o] for o in order])
    for idx in indices(x.shape):
        out[tuple(idx[o] for o in order)] = x[idx]
    return out


def mean_axis(x, axis):
    out_shape = x.shape[:axis] + x.shape[axis + 1:]
    out = np.empty(out_shape)
    for idx in indices(out_shape):
        acc = 0.0
        for j in range(x.shape[axis]):
            acc += x[idx[:axis] + (j,) + idx[axis:]]
        out[idx] = acc / x.shape[axis]
    return out


def softmax_rows(x, lam):
    out = np.empty_like(x)
    for r in range(x.shape[0]):
        row = [lam * v for v in x[r]]
        top = max(row)
        ex = [math.exp(v - top) for v in row]
        s = sum(ex)
        for j, e in enumerate(ex):
            out[r, j] = e / s
    return out


def argmax(x, axis):
    out_shape = x.shape[:axis] + x.shape[axis + 1:]
    out = np.empty(out_shape, dtype=np.int64)
    for idx in indices(out_shape):
        best, best_j = None, 0
        for j in range(x.shape[axis]):
            v = x[idx[:axis] + (j,) + idx[axis:]]
            if best is None or v > best:
                best, best_j = v, j
        out[idx] = best_j
    return out


def gather(candidates, idxs):
    out = np.empty(idxs.shape)
    for idx in indices(idxs.shape):
        out[idx] = candidates[(idxs[idx],) + idx]
    return out


def smooth(x, f):
    r, h, w = x.shape
    out = np.empty_like(x)
    for c in range(r):
        for by in range(0, h, f):
            for bx in range(0, w, f):
                acc = 0.0
                for y in range(by, by + f):
                    for xx in range(bx, bx + f):
                        acc += x[c, y, xx]
                m = acc / (f * f)
                for y in range(by, by + f):
                    for xx in range(bx, bx + f):
                        out[c, y, xx] = m
    return out


def matmul(a, b):
    if b.ndim == 2:
        b = np.broadcast_to(b, (a.shape[0],) + b.shape)
    B, M, K = a.shape
    P = b.shape[2]
    out = np.zeros((B, M, P))
    for i in range(B):
        for m in range(M):
            for p in range(P):
                acc = 0.0
                for k in range(K):
                    acc += a[i, m, k] * b[i, k, p]
                out[i, m, p] = acc
    return out


def random_shape(rng, min_rank=1, max_rank=5, max_dim=8, max_size=256):
    while True:
        rank = int(rng.integers(min_rank, max_rank + 1))
        shape = tuple(int(d) for d in rng.integers(1, max_dim + 1, size=rank))
        if int(np.prod(shape)) <= max_size:
            return shape
