"""Cosine-based identity and scene alignment scores for toy-world samples."""
from __future__ import annotations

import numpy as np

from .pipeline import ToyWorld


def _centered_cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def identity_score(sample: np.ndarray, world: ToyWorld, k: int) -> float:
    """Cosine between the mean-removed face crop and signature ``k``."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.shape != world.image_shape:
        raise ValueError(f"sample shape {sample.shape} != world shape {world.image_shape}")
    return _centered_cosine(world.face_crop(sample).ravel(),
                            world.face_crop(world.signatures[k]).ravel())


def semantic_score(sample: np.ndarray, world: ToyWorld, s: int) -> float:
    """Cosine between mean-removed out-of-face content and template ``s``."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.shape != world.image_shape:
        raise ValueError(f"sample shape {sample.shape} != world shape {world.image_shape}")
    outside = ~np.broadcast_to(world.face_mask, sample.shape)
    return _centered_cosine(sample[outside], world.templates[s][outside])
