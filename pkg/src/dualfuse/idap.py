"""Identity token aggregation with a fixed query bank, and token prepending."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError


@dataclass(frozen=True, eq=False)
class QueryBank:
    """K query vectors of width D drawn from N(0, 1).

    The bank is never trained: (K, D, seed) fully determines ``Q``, which is
    what gets written to run manifests.
    """

    K: int
    D: int
    seed: int
    Q: np.ndarray

    def as_dict(self) -> dict:
        return {"K": self.K, "D": self.D, "seed": self.seed}


def init_query_bank(K: int, D: int, seed: int) -> QueryBank:
    if K < 1 or D < 1:
        raise ValueError(f"query bank needs K, D >= 1, got K={K}, D={D}")
    # Philox is counter-based, so the draw depends only on (seed, K*D)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    return QueryBank(K, D, int(seed), rng.standard_normal((K, D)))


def _tokens(x) -> np.ndarray:
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected token tensor (B, N, D), got {x.shape}")
    return x


def attention_weights(t_id, qb: QueryBank) -> np.ndarray:
    """Scores ``t_id @ Q^T`` softmaxed over the sequence axis -> (B, N, K)."""
    t_id = _tokens(t_id)
    if t_id.shape[2] != qb.D:
        raise ShapeError(f"token dim {t_id.shape[2]} != query dim {qb.D}")
    scores = T.matmul_batched(t_id, qb.Q.T)
    b, n, k = scores.shape
    # softmax over N: move N last, flatten (B*K, N), normalise, move back
    rows = T.reshape(T.permute(scores, (0, 2, 1)), (b * k, n))
    weights = T.reshape(T.scaled_softmax_rows(rows, 1.0), (b, k, n))
    return T.permute(weights, (0, 2, 1))


def aggregate(t_id, qb: QueryBank) -> np.ndarray:
    t_id = _tokens(t_id)
    weights = attention_weights(t_id, qb)
    return T.matmul_batched(T.permute(weights, (0, 2, 1)), t_id)


def prepend(aggregated, t_semantic) -> np.ndarray:
    aggregated, t_semantic = _tokens(aggregated), _tokens(t_semantic)
    if aggregated.shape[0] != t_semantic.shape[0] or aggregated.shape[2] != t_semantic.shape[2]:
        raise ShapeError(
            f"cannot prepend {aggregated.shape} to {t_semantic.shape}: batch or width differ"
        )
    return np.concatenate([aggregated, t_semantic], axis=1)
