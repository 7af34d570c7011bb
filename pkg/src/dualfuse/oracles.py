"""Self-checks run by ``dualfuse oracle-check``.

Two independent routes are compared in each check: the vectorised fusion
operator against its scalar-loop twin, and the closed-form noise prediction
against central differences of the noised mixture's log density.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import GaussianMixture, NoiseSchedule, eps_predict, forward_noise, log_marginal
from .idaf import FusionConfig, fuse, fuse_reference

LAMBDAS = (1.0, 3.0, 5.0, 7.0)
POOL_FACTORS = (1, 2, 4)


@dataclass
class CheckResult:
    name: str
    trials: int
    failures: int
    worst: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.trials - self.failures}/{self.trials} (worst {self.worst:.3g})"


def random_fusion_case(rng: np.random.Generator, i: int):
    """Instance ``i`` of the fusion sweep: B in {1,2}, C=3, 16x16, cycling scales and pooling."""
    b = int(rng.integers(1, 3))
    shape = (b, 3, 16, 16)
    scale_s, scale_i = rng.uniform(0.2, 3.0, size=2)
    eps_s = scale_s * rng.standard_normal(shape)
    eps_i = scale_i * rng.standard_normal(shape)
    cfg = FusionConfig(
        lambda_semantic=LAMBDAS[i % 4],
        lambda_identity=LAMBDAS[(i // 4) % 4],
        pool_factor=POOL_FACTORS[(i // 16) % 3],
    )
    return eps_s, eps_i, cfg


def check_fusion_equivalence(trials: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.Generator(np.random.Philox(seed))
    failures, worst = 0, 0.0
    for i in range(trials):
        eps_s, eps_i, cfg = random_fusion_case(rng, i)
        fast, ref = fuse(eps_s, eps_i, cfg), fuse_reference(eps_s, eps_i, cfg)
        mismatched = int(np.count_nonzero(fast.decision_mask != ref.decision_mask))
        same_values = np.array_equal(fast.fused, ref.fused)
        worst = max(worst, float(mismatched))
        if mismatched or not same_values or fast.identity_fraction != ref.identity_fraction:
            failures += 1
    return CheckResult("fuse == fuse_reference (mask mismatches)", trials, failures, worst)


def random_mixture(rng: np.random.Generator, n_components: int, shape=(1, 4, 4)) -> GaussianMixture:
    weights = rng.dirichlet(np.ones(n_components))
    means = rng.standard_normal((n_components, *shape))
    return GaussianMixture(weights / weights.sum(), means, float(rng.uniform(0.05, 1.0)))


def fd_score(x: np.ndarray, t_base: int, gm: GaussianMixture, schedule: NoiseSchedule,
             h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of log p_t at ``x``."""
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for j in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[j] += h
        down[j] -= h
        g[j] = (log_marginal(up.reshape(x.shape), t_base, gm, schedule)
                - log_marginal(down.reshape(x.shape), t_base, gm, schedule)) / (2 * h)
    return grad


def score_relative_error(rng: np.random.Generator, schedule: NoiseSchedule) -> float:
    gm = random_mixture(rng, int(rng.integers(1, 5)))
    t_base = int(rng.integers(0, schedule.base_steps))
    k = rng.choice(gm.n_components, p=gm.weights)
    x0 = gm.means[k] + np.sqrt(gm.variance) * rng.standard_normal(gm.event_shape)
    x_t = forward_noise(x0, t_base, rng.standard_normal(gm.event_shape), schedule)
    analytic = eps_predict(x_t, t_base, gm, schedule)
    ab = schedule.alpha_bar_at(t_base)
    numeric = -np.sqrt(1.0 - ab) * fd_score(x_t, t_base, gm, schedule)
    return float(np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))


def check_score_consistency(points: int = 100, seed: int = 0, tol: float = 1e-4) -> CheckResult:
    rng = np.random.Generator(np.random.Philox(seed))
    schedule = NoiseSchedule()
    errors = [score_relative_error(rng, schedule) for _ in range(points)]
    return CheckResult(f"eps_predict vs finite-difference score (rel err <= {tol:g})",
                       points, sum(e > tol for e in errors), max(errors))
