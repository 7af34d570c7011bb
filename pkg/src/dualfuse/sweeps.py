"""Ablation sweeps over the fusion scales, gate timestep and module set."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .metrics import identity_score, semantic_score
from .pipeline import PipelineConfig, RunResult, ToyWorld, build_world, run_dual_line

CSV_COLUMNS = ("run_id", "ratio_or_M_or_arm", "seed", "identity_score",
               "semantic_score", "identity_fraction")
ARMS = ("full", "no-IdAF", "no-IdAP", "neither")


@dataclass(frozen=True)
class MetricsRow:
    run_id: str
    param: str
    seed: int
    identity_score: float
    semantic_score: float
    identity_fraction: float
    # config echo
    lambda_ratio: str
    M1: int
    M2: int
    K: int

    def csv_fields(self) -> list[str]:
        return [self.run_id, self.param, str(self.seed), repr(self.identity_score),
                repr(self.semantic_score), repr(self.identity_fraction)]


def ratio_label(cfg: PipelineConfig) -> str:
    return f"{cfg.fusion.lambda_semantic:g}:{cfg.fusion.lambda_identity:g}"


def score_run(world: ToyWorld, cfg: PipelineConfig, result: RunResult, param: str,
              seed: int, prefix: str) -> MetricsRow:
    return MetricsRow(
        run_id=f"{prefix}-{param}-s{seed}",
        param=param,
        seed=seed,
        identity_score=identity_score(result.sample, world, cfg.target_identity),
        semantic_score=semantic_score(result.sample, world, cfg.target_scene),
        identity_fraction=result.mean_identity_fraction,
        lambda_ratio=ratio_label(cfg),
        M1=cfg.M1,
        M2=cfg.M2,
        K=cfg.K,
    )


def evaluate_run(world: ToyWorld, cfg: PipelineConfig, param: str, seed: int,
                 prefix: str) -> tuple[MetricsRow, RunResult]:
    run_cfg = cfg.with_seed(seed)
    result = run_dual_line(world, run_cfg)
    return score_run(world, run_cfg, result, param, seed, prefix), result


def _sweep(cells: Sequence[tuple[str, PipelineConfig]], seeds: Iterable[int], prefix: str,
           world: ToyWorld | None, keep: dict | None = None) -> list[MetricsRow]:
    """Run every (cell, seed) pair in order; ``keep`` collects each cell's first-seed result."""
    seeds = sorted(seeds)
    rows = []
    for param, cfg in cells:
        # world seeds never vary inside a sweep, so every cell sees the same world
        w = world if world is not None else build_world(cfg)
        for seed in seeds:
            row, result = evaluate_run(w, cfg, param, seed, prefix)
            rows.append(row)
            if keep is not None and param not in keep:
                keep[param] = result
    return rows


def ablate_lambda(base: PipelineConfig, ratios: Sequence[float], seeds: Iterable[int],
                  world: ToyWorld | None = None, keep: dict | None = None) -> list[MetricsRow]:
    """Sweep the identity softmax scale with the semantic scale held fixed.

    ``ratios`` are identity-to-semantic ratios, e.g. ``[1, 3, 5, 7]`` for 1:1 .. 1:7.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive")
    cells = []
    for r in sorted(ratios):
        fusion = replace(base.fusion, lambda_identity=base.fusion.lambda_semantic * r)
        cfg = replace(base, fusion=fusion)
        cells.append((ratio_label(cfg), cfg))
    return _sweep(cells, seeds, "lambda", world, keep)


def ablate_timestep(base: PipelineConfig, M_values: Sequence[int], seeds: Iterable[int],
                    world: ToyWorld | None = None, keep: dict | None = None,
                    offset: int = 5) -> list[MetricsRow]:
    """Sweep the fusion gate M1; the aggregation gate follows at M1 + offset."""
    cells = []
    for m in sorted(M_values):
        cfg = replace(base, M1=m, M2=min(m + offset, base.steps))
        cells.append((f"M{m}", cfg))
    return _sweep(cells, seeds, "timestep", world, keep)


def arm_config(base: PipelineConfig, arm: str) -> PipelineConfig:
    closed = base.steps
    return {
        "full": base,
        "no-IdAF": replace(base, M1=closed),
        "no-IdAP": replace(base, M2=closed),
        "neither": replace(base, M1=closed, M2=closed),
    }[arm]


def ablate_modules(base: PipelineConfig, seeds: Iterable[int],
                   world: ToyWorld | None = None, keep: dict | None = None) -> list[MetricsRow]:
    return _sweep([(arm, arm_config(base, arm)) for arm in ARMS], seeds, "modules", world, keep)


def rows_to_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.csv_fields())
    return buf.getvalue()


# --- summaries ---------------------------------------------------------------

def _by_param(rows: Sequence[MetricsRow]) -> dict[str, list[MetricsRow]]:
    out: dict[str, list[MetricsRow]] = {}
    for row in rows:
        out.setdefault(row.param, []).append(row)
    return out


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    se = float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else float("nan")
    return float(a.mean()), se


def module_ordering(rows: Sequence[MetricsRow], n_se: float = 3.0) -> dict:
    """Full vs. single-module ablations: identity against no-IdAF, scene against no-IdAP."""
    groups = _by_param(rows)
    report = {}
    for label, metric, other in (("identity", "identity_score", "no-IdAF"),
                                 ("semantic", "semantic_score", "no-IdAP")):
        m_full, se_full = mean_se([getattr(r, metric) for r in groups["full"]])
        m_other, se_other = mean_se([getattr(r, metric) for r in groups[other]])
        se = float(np.hypot(se_full, se_other))
        diff = m_full - m_other
        report[label] = {
            "full": m_full, "full_se": se_full, other: m_other, f"{other}_se": se_other,
            "difference": diff, "difference_se": se,
            "z": diff / se if se > 0 else (float("inf") if diff > 0 else float("-inf")),
            "pass": bool(diff > n_se * se and diff > 0),
        }
    return report


def timestep_trend(rows: Sequence[MetricsRow]) -> dict:
    """Mean identity score per gate; each later gate may exceed the earlier by at most one SE."""
    groups = _by_param(rows)
    ordered = sorted(groups, key=lambda p: int(p.lstrip("M")))
    cells = []
    for p in ordered:
        m, se = mean_se([r.identity_score for r in groups[p]])
        cells.append({"M": int(p.lstrip("M")), "identity_mean": m, "identity_se": se})
    pairs = []
    for a, b in zip(cells, cells[1:]):
        se = float(np.hypot(a["identity_se"], b["identity_se"]))
        pairs.append({"from": a["M"], "to": b["M"], "increase": b["identity_mean"] - a["identity_mean"],
                      "se": se, "ok": bool(b["identity_mean"] <= a["identity_mean"] + se)})
    return {"cells": cells, "pairs": pairs, "pass": all(p["ok"] for p in pairs)}


def lambda_trend(rows: Sequence[MetricsRow], low: str = "1:1", high: str = "1:7",
                 confidence: float = 0.95) -> dict:
    """Paired (by seed) difference in mean identity fraction between two ratios, with a t CI."""
    groups = _by_param(rows)
    lo = {r.seed: r.identity_fraction for r in groups[low]}
    hi = {r.seed: r.identity_fraction for r in groups[high]}
    seeds = sorted(set(lo) & set(hi))
    diffs = np.array([hi[s] - lo[s] for s in seeds])
    mean, se = mean_se(diffs)
    half = float(stats.t.ppf(0.5 + confidence / 2, diffs.size - 1) * se)
    return {
        "low": low, "high": high, "n": int(diffs.size),
        "fraction_low": float(np.mean([lo[s] for s in seeds])),
        "fraction_high": float(np.mean([hi[s] for s in seeds])),
        "difference": mean, "ci": [mean - half, mean + half], "confidence": confidence,
        "pass": bool(mean - half > 0),
    }
