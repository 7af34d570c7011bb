"""Command line entry point: ``dualfuse <command> [--config PATH] [--out DIR] [--seeds N]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from . import __version__
from .config import ConfigError, emit_config, parse_config, parse_config_text
from .oracles import check_fusion_equivalence, check_score_consistency
from .pipeline import PipelineConfig, build_world, run_dual_line
from .render import (OutputError, dump_json, render_outputs, write_grid_png, write_mask_png,
                     write_text)
from .sweeps import (ablate_lambda, ablate_modules, ablate_timestep, lambda_trend, module_ordering,
                     rows_to_csv, score_run, timestep_trend)

SWEEP_COMMANDS = ("ablate-lambda", "ablate-m", "ablate-modules")
DEFAULT_RATIOS = (1.0, 3.0, 5.0, 7.0)
DEFAULT_M_VALUES = (10, 20, 30, 40)


def _manifest(command: str, cfg: PipelineConfig, params: dict, outputs: dict,
              trace_summary, report=None) -> dict:
    return {
        "command": command,
        "params": params,
        "config": cfg.as_dict(),
        "config_text": emit_config(cfg),
        "schedule": cfg.schedule.as_dict(),
        "query_bank": {"K": cfg.K, "D": cfg.D, "seed": cfg.seeds.query},
        "version": __version__,
        "trace_summary": trace_summary,
        "outputs": outputs,
        "report": report,
    }


def run_sample(cfg: PipelineConfig, params: dict, out: Path) -> dict:
    world = build_world(cfg)
    result = run_dual_line(world, cfg)
    row = score_run(world, cfg, result, "sample", cfg.seeds.noise, "sample")
    fused = [r.mask for r in result.trace if r.mask is not None]
    outputs = render_outputs(result.sample[None], [fused[-1] if fused else None], out,
                             csv_text=rows_to_csv([row]))
    trace = [r.summary() for r in result.trace]
    report = {"identity_score": row.identity_score, "semantic_score": row.semantic_score,
              "mean_identity_fraction": row.identity_fraction,
              "decoded_identity": result.decoded_identity}
    return _manifest("sample", cfg, params, outputs, trace, report)


def run_sweep(command: str, cfg: PipelineConfig, params: dict, out: Path) -> dict:
    seeds = params["seeds"]
    kept: dict = {}
    if command == "ablate-lambda":
        rows = ablate_lambda(cfg, params["ratios"], seeds, keep=kept)
        report = lambda_trend(rows) if {"1:1", "1:7"} <= {r.param for r in rows} and len(seeds) > 1 else None
    elif command == "ablate-m":
        rows = ablate_timestep(cfg, params["M_values"], seeds, keep=kept)
        report = timestep_trend(rows) if len(seeds) > 1 else None
    else:
        rows = ablate_modules(cfg, seeds, keep=kept)
        report = module_ordering(rows) if len(seeds) > 1 else None

    outputs: dict = {}
    write_text(rows_to_csv(rows), out / "metrics.csv")
    outputs["metrics.csv"] = {}
    cells = list(kept)
    write_grid_png([kept[c].sample for c in cells], out / "grid.png")
    outputs["grid.png"] = {"cells": cells, "seed": min(seeds)}
    for i, c in enumerate(cells):
        masks = [r.mask for r in kept[c].trace if r.mask is not None]
        if masks:
            name = f"mask_{i}.png"
            write_mask_png(masks[-1], out / name)
            outputs[name] = {"cell": c, "seed": min(seeds)}
    summary = [{"run_id": r.run_id, "mean_identity_fraction": r.identity_fraction,
                "M1": r.M1, "M2": r.M2, "lambda_ratio": r.lambda_ratio, "K": r.K} for r in rows]
    return _manifest(command, cfg, params, outputs, summary, report)


def execute(command: str, cfg: PipelineConfig, params: dict, out: Path) -> dict:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot write {out}: {exc.strerror or exc}") from exc
    if command == "sample":
        manifest = run_sample(cfg, params, out)
    elif command in SWEEP_COMMANDS:
        manifest = run_sweep(command, cfg, params, out)
    else:
        raise ValueError(f"unknown command {command!r}")
    write_text(dump_json(manifest), out / "manifest.json")
    return manifest


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualfuse", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds_default: int):
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seeds", type=int, default=seeds_default,
                       help="number of seeds (0..N-1) per sweep cell")

    common(sub.add_parser("sample", help="draw one dual-line sample"), 1)
    p = sub.add_parser("ablate-lambda", help="sweep the identity:semantic softmax ratio")
    common(p, 20)
    p.add_argument("--ratios", type=_floats, default=list(DEFAULT_RATIOS),
                   help="identity multiples of the semantic scale, e.g. 1,3,5,7")
    p = sub.add_parser("ablate-m", help="sweep the fusion gate timestep (aggregation gate = M + 5)")
    common(p, 20)
    p.add_argument("--m-values", type=_ints, default=list(DEFAULT_M_VALUES))
    common(sub.add_parser("ablate-modules", help="full / no-IdAF / no-IdAP / neither"), 100)

    p = sub.add_parser("oracle-check", help="fusion loop-oracle and finite-difference score checks")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--points", type=int, default=100)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, default=Path("replay"))
    return parser


def _fail(kind: str, message: str, code: int = 2) -> int:
    print(json.dumps({"error": kind, "message": message}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle-check":
            results = [check_fusion_equivalence(args.trials), check_score_consistency(args.points)]
            for r in results:
                print(r.line())
            return 0 if all(r.passed for r in results) else 1

        if args.command == "replay":
            recorded = json.loads(args.manifest.read_text(encoding="utf-8"))
            cfg = parse_config_text(recorded["config_text"])
            manifest = execute(recorded["command"], cfg, recorded["params"], args.out)
        else:
            cfg = parse_config(args.config) if args.config else PipelineConfig()
            if args.command == "sample":
                params = {}
            else:
                if args.seeds < 1:
                    raise ValueError("--seeds must be >= 1")
                params = {"seeds": list(range(args.seeds))}
                if args.command == "ablate-lambda":
                    params["ratios"] = args.ratios
                elif args.command == "ablate-m":
                    params["M_values"] = args.m_values
            manifest = execute(args.command, cfg, params, args.out)
    except ConfigError as exc:
        return _fail("config", str(exc))
    except OutputError as exc:
        return _fail("output", str(exc))
    except (OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc))

    report = manifest.get("report")
    print(f"wrote {args.out}/manifest.json")
    if report is not None:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
