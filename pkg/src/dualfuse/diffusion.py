"""Noise schedule, closed-form Gaussian-mixture denoiser, CFG and DDIM updates."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .tensor import ShapeError, as_tensor

FINAL = -1
"""Pseudo schedule index with alpha_bar == 1 (clean data), used as the last DDIM target."""


@dataclass(frozen=True)
class NoiseSchedule:
    base_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_steps: int = 50

    def __post_init__(self):
        if self.base_steps < 1 or not 1 <= self.sample_steps <= self.base_steps:
            raise ValueError(
                f"need 1 <= sample_steps ({self.sample_steps}) <= base_steps ({self.base_steps})"
            )
        if not 0 < self.beta_start < self.beta_end < 1:
            raise ValueError("betas must satisfy 0 < beta_start < beta_end < 1")

    @cached_property
    def betas(self) -> np.ndarray:
        return np.linspace(self.beta_start, self.beta_end, self.base_steps, dtype=np.float64)

    @cached_property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(1.0 - self.betas)

    @cached_property
    def step_indices(self) -> np.ndarray:
        """Base-schedule indices in sampling order (noisiest first)."""
        stride = self.base_steps // self.sample_steps
        return (np.arange(self.sample_steps, dtype=np.int64) * stride)[::-1].copy()

    def alpha_bar_at(self, t_base: int) -> float:
        if t_base == FINAL:
            return 1.0
        if not 0 <= t_base < self.base_steps:
            raise IndexError(f"schedule index {t_base} outside [0, {self.base_steps})")
        return float(self.alpha_bar[t_base])

    def transitions(self) -> list[tuple[int, int]]:
        """(t_from, t_to) pairs for every DDIM update, ending at ``FINAL``."""
        idx = [int(i) for i in self.step_indices]
        return list(zip(idx, idx[1:] + [FINAL]))

    def as_dict(self) -> dict:
        return {
            "base_steps": self.base_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sample_steps": self.sample_steps,
            "step_indices": [int(i) for i in self.step_indices],
        }


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted isotropic Gaussians sharing one variance.

    ``means`` has shape (n_components, C, H, W). A variance of exactly zero is
    accepted so that point-mass priors (used by contraction checks) work.
    """

    weights: np.ndarray
    means: np.ndarray
    variance: float
    _log_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = as_tensor(self.weights).reshape(-1)
        m = as_tensor(self.means)
        if m.ndim < 2 or m.shape[0] != w.shape[0] or w.shape[0] < 1:
            raise ShapeError(f"{w.shape[0]} weights for means of shape {m.shape}")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be a probability vector")
        if not self.variance >= 0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_weights", np.log(w))

    @classmethod
    def uniform(cls, means, variance: float) -> "GaussianMixture":
        means = as_tensor(means)
        n = means.shape[0]
        return cls(np.full(n, 1.0 / n), means, variance)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def event_shape(self) -> tuple[int, ...]:
        return self.means.shape[1:]


def forward_noise(x0, t_base: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    x0, eps = as_tensor(x0), as_tensor(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {x0.shape} and noise {eps.shape} differ")
    ab = schedule.alpha_bar_at(t_base)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def _check_event(x_t: np.ndarray, gm: GaussianMixture):
    if x_t.shape != gm.event_shape:
        raise ShapeError(f"x_t shape {x_t.shape} != mixture event shape {gm.event_shape}")


def component_responsibilities(x_t, t_base: int, gm: GaussianMixture, schedule: NoiseSchedule):
    x_t = as_tensor(x_t)
    _check_event(x_t, gm)
    ab = schedule.alpha_bar_at(t_base)
    a = np.sqrt(ab)
    v = (1.0 - ab) + ab * gm.variance
    diff = x_t[None] - a * gm.means
    sq = (diff.reshape(gm.n_components, -1) ** 2).sum(axis=1)
    logits = gm._log_weights - sq / (2.0 * v)
    return np.exp(logits - logsumexp(logits))


def posterior_x0(x_t, t_base: int, gm: GaussianMixture, schedule: NoiseSchedule) -> np.ndarray:
    """Exact E[x0 | x_t] under the mixture prior and the VP forward kernel."""
    x_t = as_tensor(x_t)
    r = component_responsibilities(x_t, t_base, gm, schedule)
    ab = schedule.alpha_bar_at(t_base)
    a = np.sqrt(ab)
    v = (1.0 - ab) + ab * gm.variance
    mean_mu = np.tensordot(r, gm.means, axes=1)
    # sum_k r_k (mu_k + g (x_t - a mu_k)) collapses because sum_k r_k = 1
    gain = gm.variance * a / v
    return mean_mu + gain * (x_t - a * mean_mu)


def eps_predict(x_t, t_base: int, gm: GaussianMixture, schedule: NoiseSchedule) -> np.ndarray:
    ab = schedule.alpha_bar_at(t_base)
    if ab >= 1.0:
        raise ValueError("noise prediction undefined at alpha_bar == 1")
    x_t = as_tensor(x_t)
    x0 = posterior_x0(x_t, t_base, gm, schedule)
    return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


def log_marginal(x_t, t_base: int, gm: GaussianMixture, schedule: NoiseSchedule) -> float:
    """log p_t(x_t) of the noised mixture; the reference for score checks."""
    x_t = as_tensor(x_t)
    _check_event(x_t, gm)
    ab = schedule.alpha_bar_at(t_base)
    v = (1.0 - ab) + ab * gm.variance
    d = x_t.size
    sq = ((x_t[None] - np.sqrt(ab) * gm.means).reshape(gm.n_components, -1) ** 2).sum(axis=1)
    return float(logsumexp(gm._log_weights - sq / (2.0 * v)) - 0.5 * d * np.log(2.0 * np.pi * v))


def cfg_combine(eps_cond, eps_uncond, w: float) -> np.ndarray:
    eps_cond, eps_uncond = as_tensor(eps_cond), as_tensor(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeError(f"{eps_cond.shape} vs {eps_uncond.shape}")
    if w < 0:
        raise ValueError(f"guidance scale must be >= 0, got {w}")
    if w == 1.0:
        # u + (c - u) is not bitwise c in floating point
        return eps_cond.copy()
    return eps_uncond + w * (eps_cond - eps_uncond)


def ddim_step(x_t, eps_hat, t_from: int, t_to: int, schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t_from`` to the cleaner ``t_to``."""
    ab_from = schedule.alpha_bar_at(t_from)
    ab_to = schedule.alpha_bar_at(t_to)
    if not ab_from < ab_to:
        raise ValueError(f"DDIM must move toward less noise: {t_from} -> {t_to}")
    x_t, eps_hat = as_tensor(x_t), as_tensor(eps_hat)
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"{x_t.shape} vs {eps_hat.shape}")
    x0_hat = (x_t - np.sqrt(1.0 - ab_from) * eps_hat) / np.sqrt(ab_from)
    return np.sqrt(ab_to) * x0_hat + np.sqrt(1.0 - ab_to) * eps_hat


def sample_ddim(eps_fn, x_T, schedule: NoiseSchedule) -> np.ndarray:
    """Run every DDIM transition with ``eps_fn(x, t_base)`` as the noise model."""
    x = as_tensor(x_T)
    for t_from, t_to in schedule.transitions():
        x = ddim_step(x, eps_fn(x, t_from), t_from, t_to, schedule)
    return x
