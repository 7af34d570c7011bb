"""Identity-adaptive fusion of two branch noise predictions.

The two noises compete per pixel: each branch gets a smoothed magnitude
("saliency") map, the maps are turned into spatial distributions with a
branch-specific softmax temperature, and every element of the fused noise is
taken from whichever branch has the larger weight at its pixel.

Branch order on the decision axis is fixed to ``[semantic, identity]`` so the
branch index equals the index of its softmax scale, and ties resolve to the
semantic branch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError

SEMANTIC = 0
IDENTITY = 1
BRANCH_ORDER = ("semantic", "identity")


@dataclass(frozen=True)
class FusionConfig:
    lambda_semantic: float = 1.0
    lambda_identity: float = 5.0
    pool_factor: int = 4
    c_mid: Optional[int] = None  # None: use the channel count of the noises

    def __post_init__(self):
        if not (self.lambda_semantic > 0 and self.lambda_identity > 0):
            raise ValueError("both softmax scales must be positive")
        if self.pool_factor < 1:
            raise ValueError(f"pool_factor must be >= 1, got {self.pool_factor}")
        if self.c_mid is not None and self.c_mid < 1:
            raise ValueError(f"c_mid must be >= 1, got {self.c_mid}")

    @property
    def lambdas(self) -> tuple[float, float]:
        return (self.lambda_semantic, self.lambda_identity)


@dataclass
class FusionReport:
    fused: np.ndarray
    decision_mask: np.ndarray
    identity_fraction: float


def _check_pair(eps_semantic, eps_identity):
    a, b = T.as_tensor(eps_semantic), T.as_tensor(eps_identity)
    if a.shape != b.shape:
        raise ShapeError(f"branch noises differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W) noises, got {a.shape}")
    return a, b


def _resolve_c_mid(cfg: FusionConfig, n_branch: int, batch: int, channels: int) -> int:
    c_mid = channels if cfg.c_mid is None else cfg.c_mid
    if (n_branch * batch * channels) % c_mid:
        raise ValueError(
            f"c_mid={c_mid} does not divide the {n_branch * batch * channels} (H, W) planes"
        )
    return c_mid


def build_stack(eps_semantic, eps_identity) -> np.ndarray:
    a, b = _check_pair(eps_semantic, eps_identity)
    return T.stack_new_axis([a, b], axis_position=0)


def saliency(stack: np.ndarray, cfg: FusionConfig) -> np.ndarray:
    """(2, B, C, H, W) decision stack -> (2, B, H, W) nonnegative saliency."""
    stack = T.as_tensor(stack)
    if stack.ndim != 5:
        raise ShapeError(f"expected (2, B, C, H, W), got {stack.shape}")
    n, b, c, h, w = stack.shape
    c_mid = _resolve_c_mid(cfg, n, b, c)
    planes = T.reshape(T.abs_elem(stack), (-1, c_mid, h, w))
    smoothed = T.spatial_smooth(T.reshape(planes, (-1, h, w)), cfg.pool_factor)
    smoothed = T.reshape(smoothed, (n, b, c, h, w))
    return T.mean_over_axis(smoothed, axis=2)


def branch_weights(sal: np.ndarray, cfg: FusionConfig) -> np.ndarray:
    sal = T.as_tensor(sal)
    if sal.ndim != 4 or sal.shape[0] != 2:
        raise ShapeError(f"expected (2, B, H, W) saliency, got {sal.shape}")
    _, b, h, w = sal.shape
    out = np.empty_like(sal)
    for i, lam in enumerate(cfg.lambdas):
        rows = T.reshape(sal[i], (b, h * w))
        out[i] = T.reshape(T.scaled_softmax_rows(rows, lam), (b, h, w))
    return out


def fuse(eps_semantic, eps_identity, cfg: FusionConfig) -> FusionReport:
    stack = build_stack(eps_semantic, eps_identity)
    weights = branch_weights(saliency(stack, cfg), cfg)
    # per-pixel weights are shared by every channel
    weights = np.broadcast_to(weights[:, :, None], stack.shape)
    mask = T.argmax_axis(weights, axis=0)
    fused = T.gather_axis(stack, mask)
    return FusionReport(fused, mask, float(np.count_nonzero(mask == IDENTITY)) / mask.size)


def fuse_reference(eps_semantic, eps_identity, cfg: FusionConfig) -> FusionReport:
    """Scalar-loop implementation of :func:`fuse` sharing none of its kernels."""
    a, b = _check_pair(eps_semantic, eps_identity)
    B, C, H, W = a.shape
    f = cfg.pool_factor
    if H % f or W % f:
        raise ValueError(f"pool_factor {f} must divide H={H} and W={W}")
    _resolve_c_mid(cfg, 2, B, C)
    branches = (a.tolist(), b.tolist())

    weights = [[None] * B for _ in range(2)]
    for i in range(2):
        lam = cfg.lambdas[i]
        for bi in range(B):
            sal = [[0.0] * W for _ in range(H)]
            for ci in range(C):
                plane = branches[i][bi][ci]
                for by in range(0, H, f):
                    for bx in range(0, W, f):
                        acc = 0.0
                        for y in range(by, by + f):
                            for x in range(bx, bx + f):
                                acc += abs(plane[y][x])
                        block_mean = acc / (f * f)
                        for y in range(by, by + f):
                            for x in range(bx, bx + f):
                                sal[y][x] += block_mean
            flat = [lam * (sal[y][x] / C) for y in range(H) for x in range(W)]
            top = max(flat)
            ex = [math.exp(v - top) for v in flat]
            total = sum(ex)
            weights[i][bi] = [e / total for e in ex]

    fused = np.empty_like(a)
    mask = np.zeros(a.shape, dtype=np.int64)
    picked = 0
    for bi in range(B):
        for y in range(H):
            for x in range(W):
                p = y * W + x
                choice = IDENTITY if weights[IDENTITY][bi][p] > weights[SEMANTIC][bi][p] else SEMANTIC
                for ci in range(C):
                    mask[bi, ci, y, x] = choice
                    fused[bi, ci, y, x] = branches[choice][bi][ci][y][x]
                    picked += choice
    return FusionReport(fused, mask, picked / mask.size)
