"""Dual-line sampling over a small synthetic world of scenes and identities.

Scenes ("templates") fill the frame except a fixed face block; identities
("signatures") live only inside that block. Each conditioning of the two
sampling lines is a Gaussian mixture over these patterns, so every noise
prediction is exact and the only moving parts are the gating, the identity
aggregation and the fusion operator.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .diffusion import GaussianMixture, NoiseSchedule, cfg_combine, ddim_step, eps_predict
from .idaf import FusionConfig, fuse
from .idap import aggregate, init_query_bank, prepend


ID_BRANCH_MODES = ("scene_agnostic", "closeup")


@dataclass(frozen=True)
class Seeds:
    world: int = 0
    query: int = 1
    noise: int = 2
    tokens: int = 3


@dataclass(frozen=True)
class PipelineConfig:
    steps: int = 50
    M1: int = 10
    M2: int = 15
    guidance_semantic: float = 5.0
    guidance_identity: float = 5.0
    fusion: FusionConfig = field(default_factory=FusionConfig)
    K: int = 8
    N: int = 16
    D: int = 16
    seeds: Seeds = field(default_factory=Seeds)
    target_identity: int = 0
    target_scene: int = 0
    # world construction
    image_shape: tuple[int, int, int] = (3, 16, 16)
    face_region: tuple[int, int, int, int] = (2, 8, 5, 11)
    n_scenes: int = 4
    n_identities: int = 6
    data_variance: float = 0.0025
    closeup_scale: int = 2
    distractor_rms: float = 0.3
    id_branch: str = "scene_agnostic"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        for name in ("M1", "M2"):
            v = getattr(self, name)
            if not 0 <= v <= self.steps:
                raise ValueError(f"{name}={v} outside [0, steps={self.steps}]")
        if not 0 <= self.target_identity < self.n_identities:
            raise ValueError(f"target_identity {self.target_identity} out of range")
        if not 0 <= self.target_scene < self.n_scenes:
            raise ValueError(f"target_scene {self.target_scene} out of range")
        if self.n_identities > self.D or self.n_scenes > self.D:
            raise ValueError("token width D must hold one direction per identity and scene")
        if self.guidance_semantic < 0 or self.guidance_identity < 0:
            raise ValueError("guidance scales must be >= 0")
        if self.id_branch not in ID_BRANCH_MODES:
            raise ValueError(f"id_branch must be one of {ID_BRANCH_MODES}, got {self.id_branch!r}")
        if self.K < 1 or self.N < 1:
            raise ValueError("K and N must be >= 1")

    @property
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(sample_steps=self.steps)

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Per-run variant used by sweeps: one seed drives noise and token distractors."""
        return replace(self, seeds=replace(self.seeds, noise=seed, tokens=seed))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ToyWorld:
    templates: np.ndarray  # (S, C, H, W)
    signatures: np.ndarray  # (I, C, H, W)
    face_region: tuple[int, int, int, int]
    variance: float

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.templates.shape[1:])

    @property
    def face_mask(self) -> np.ndarray:
        """Boolean (H, W) mask of the face block."""
        _, h, w = self.image_shape
        r0, r1, c0, c1 = self.face_region
        m = np.zeros((h, w), dtype=bool)
        m[r0:r1, c0:c1] = True
        return m

    def face_crop(self, x: np.ndarray) -> np.ndarray:
        r0, r1, c0, c1 = self.face_region
        return x[:, r0:r1, c0:c1]


@dataclass(frozen=True, eq=False)
class BranchMixtures:
    id_branch: GaussianMixture
    semantic_plain: GaussianMixture
    semantic_with_id: Optional[GaussianMixture]
    uncond: GaussianMixture


def _unit_rms_zero_mean(x: np.ndarray, support: np.ndarray) -> np.ndarray:
    vals = x[support]
    vals = vals - vals.mean()
    out = np.zeros_like(x)
    out[support] = vals / np.sqrt(np.mean(vals**2))
    return out


def build_world(cfg: PipelineConfig) -> ToyWorld:
    c, h, w = cfg.image_shape
    r0, r1, c0, c1 = cfg.face_region
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise ValueError(f"face region {cfg.face_region} outside a {h}x{w} frame")
    rng = np.random.Generator(np.random.Philox(cfg.seeds.world))
    face = np.zeros((c, h, w), dtype=bool)
    face[:, r0:r1, c0:c1] = True

    templates = np.empty((cfg.n_scenes, c, h, w))
    for s in range(cfg.n_scenes):
        # low-frequency layouts: smoothed white noise per channel
        raw = gaussian_filter(rng.standard_normal((c, h, w)), sigma=(0, 2.0, 2.0), mode="wrap")
        templates[s] = _unit_rms_zero_mean(raw, ~face)

    signatures = np.empty((cfg.n_identities, c, h, w))
    for k in range(cfg.n_identities):
        signatures[k] = _unit_rms_zero_mean(rng.standard_normal((c, h, w)), face)
    return ToyWorld(templates, signatures, tuple(cfg.face_region), cfg.data_variance)


def closeup(world: ToyWorld, k: int, scale: int) -> np.ndarray:
    """Enlarged, frame-centred copy of signature ``k`` on a zero background."""
    c, h, w = world.image_shape
    patch = world.face_crop(world.signatures[k])
    big = np.kron(patch, np.ones((1, scale, scale)))
    bh, bw = big.shape[1:]
    if bh > h or bw > w:
        raise ValueError(f"close-up scale {scale} does not fit a {h}x{w} frame")
    out = np.zeros((c, h, w))
    top, left = (h - bh) // 2, (w - bw) // 2
    out[:, top : top + bh, left : left + bw] = big
    return out


def build_branches(world: ToyWorld, cfg: PipelineConfig, identity: Optional[int]) -> BranchMixtures:
    """Conditionings for both lines; ``identity`` is what the aggregated tokens decode to.

    The identity line is either scene-agnostic (target identity in the face
    block over a uniform choice of scene, the default) or a literal close-up:
    an enlarged copy of the signature on an empty frame.
    """
    k_star, s_star = cfg.target_identity, cfg.target_scene
    var = world.variance
    tpl, sig = world.templates, world.signatures
    if cfg.id_branch == "closeup":
        id_branch = GaussianMixture.uniform(closeup(world, k_star, cfg.closeup_scale)[None], var)
    else:
        id_branch = GaussianMixture.uniform(tpl + sig[k_star], var)
    plain = GaussianMixture.uniform(tpl[s_star][None] + sig, var)
    with_id = None
    if identity is not None:
        with_id = GaussianMixture.uniform((tpl[s_star] + sig[identity])[None], var)
    pairs = (tpl[:, None] + sig[None]).reshape(-1, *world.image_shape)
    uncond = GaussianMixture.uniform(pairs, var)
    return BranchMixtures(id_branch, plain, with_id, uncond)


# --- token codec -----------------------------------------------------------

def identity_direction(k: int, D: int) -> np.ndarray:
    e = np.zeros(D)
    e[k] = 1.0
    return e


def scene_direction(s: int, D: int) -> np.ndarray:
    # scenes use the trailing dimensions so the two vocabularies stay apart when possible
    e = np.zeros(D)
    e[D - 1 - s] = 1.0
    return e


def encode_tokens(world: ToyWorld, k: int, s: int, cfg: PipelineConfig,
                  distractor_rms: Optional[float] = None):
    """Return ``(t_id, t_semantic)``, each of shape (1, N, D).

    Every identity token carries the one-hot direction of ``k`` plus Gaussian
    distractors, so the identity is spread redundantly over the sequence.
    """
    if not 0 <= k < world.signatures.shape[0]:
        raise ValueError(f"identity index {k} out of range")
    if not 0 <= s < world.templates.shape[0]:
        raise ValueError(f"scene index {s} out of range")
    rms = cfg.distractor_rms if distractor_rms is None else distractor_rms
    rng = np.random.Generator(np.random.Philox(cfg.seeds.tokens))
    t_id = identity_direction(k, cfg.D) + rms * rng.standard_normal((1, cfg.N, cfg.D))
    t_sem = scene_direction(s, cfg.D) + rms * rng.standard_normal((1, cfg.N, cfg.D))
    return t_id, t_sem


def decode_identity(aggregated: np.ndarray, world: ToyWorld, margin: float = 1e-6) -> Optional[int]:
    """Mean-pool aggregated tokens and read off the strongest identity direction.

    Returns ``None`` when the best two identities are within ``margin``.
    """
    aggregated = np.asarray(aggregated, dtype=np.float64)
    n_ids = world.signatures.shape[0]
    if aggregated.ndim != 3 or aggregated.shape[1] == 0 or aggregated.shape[2] < n_ids:
        raise ValueError(f"cannot decode identities from tokens of shape {aggregated.shape}")
    pooled = aggregated.mean(axis=(0, 1))
    scores = pooled[:n_ids]  # projections onto the one-hot identity directions
    order = np.argsort(-scores, kind="stable")
    if n_ids > 1 and scores[order[0]] - scores[order[1]] < margin:
        return None
    return int(order[0])


def resolve_identity(world: ToyWorld, cfg: PipelineConfig) -> Optional[int]:
    """Encode, aggregate, prepend and decode: the identity the semantic line will see."""
    t_id, t_sem = encode_tokens(world, cfg.target_identity, cfg.target_scene, cfg)
    qb = init_query_bank(cfg.K, cfg.D, cfg.seeds.query)
    sequence = prepend(aggregate(t_id, qb), t_sem)
    return decode_identity(sequence[:, : cfg.K], world)


# --- sampling --------------------------------------------------------------

@dataclass
class StepRecord:
    t: int
    t_from: int
    t_to: int
    alpha_bar_to: float
    idaf_active: bool
    idap_active: bool
    identity_fraction: float
    mask: Optional[np.ndarray] = field(default=None, repr=False)  # (H, W) int, when fused

    def summary(self) -> dict:
        return {
            "t": self.t,
            "t_from": self.t_from,
            "t_to": self.t_to,
            "alpha_bar_to": self.alpha_bar_to,
            "idaf": self.idaf_active,
            "idap": self.idap_active,
            "identity_fraction": self.identity_fraction,
        }


@dataclass
class RunResult:
    sample: np.ndarray
    trace: list[StepRecord]
    decoded_identity: Optional[int]

    @property
    def mean_identity_fraction(self) -> float:
        fracs = [r.identity_fraction for r in self.trace if r.idaf_active]
        return float(np.mean(fracs)) if fracs else 0.0


def initial_noise(cfg: PipelineConfig) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(cfg.seeds.noise))
    return rng.standard_normal(cfg.image_shape)


def run_dual_line(world: ToyWorld, cfg: PipelineConfig,
                  branches: Optional[BranchMixtures] = None) -> RunResult:
    """Sample one image; both lines predict noise for the same latent each step.

    Step counter ``t`` runs 1..steps from the noisiest step, and the gates open
    for ``t > M1`` (fusion) and ``t > M2`` (aggregated identity conditioning).
    """
    schedule = cfg.schedule
    decoded = resolve_identity(world, cfg) if cfg.M2 < cfg.steps else None
    if branches is None:
        branches = build_branches(world, cfg, decoded)
    x = initial_noise(cfg)
    trace: list[StepRecord] = []
    for t, (t_from, t_to) in enumerate(schedule.transitions(), start=1):
        eps_u = eps_predict(x, t_from, branches.uncond, schedule)
        eps_id = cfg_combine(eps_predict(x, t_from, branches.id_branch, schedule),
                             eps_u, cfg.guidance_identity)
        idap_on = t > cfg.M2 and branches.semantic_with_id is not None
        sem_mix = branches.semantic_with_id if idap_on else branches.semantic_plain
        eps_sem = cfg_combine(eps_predict(x, t_from, sem_mix, schedule),
                              eps_u, cfg.guidance_semantic)
        idaf_on = t > cfg.M1
        if idaf_on:
            report = fuse(eps_sem[None], eps_id[None], cfg.fusion)
            eps, frac, mask = report.fused[0], report.identity_fraction, report.decision_mask[0, 0]
        else:
            eps, frac, mask = eps_sem, 0.0, None
        x = ddim_step(x, eps, t_from, t_to, schedule)
        trace.append(StepRecord(t, t_from, t_to, schedule.alpha_bar_at(t_to),
                                idaf_on, idap_on, frac, mask))
    return RunResult(x, trace, decoded)


def run_single_line(world: ToyWorld, cfg: PipelineConfig,
                    branches: Optional[BranchMixtures] = None, line: str = "semantic") -> np.ndarray:
    """One CFG + DDIM line on its own: plain semantics (the closed-gate
    reference) or the identity line alone."""
    schedule = cfg.schedule
    if branches is None:
        branches = build_branches(world, cfg, None)
    if line == "semantic":
        cond, w = branches.semantic_plain, cfg.guidance_semantic
    elif line == "identity":
        cond, w = branches.id_branch, cfg.guidance_identity
    else:
        raise ValueError(f"unknown line {line!r}")
    x = initial_noise(cfg)
    for t_from, t_to in schedule.transitions():
        eps_u = eps_predict(x, t_from, branches.uncond, schedule)
        eps = cfg_combine(eps_predict(x, t_from, cond, schedule), eps_u, w)
        x = ddim_step(x, eps, t_from, t_to, schedule)
    return x
