"""Line-oriented ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored; unknown keys, malformed lines and
values of the wrong type are rejected with their line number. Keys that are
absent keep the defaults of :class:`PipelineConfig`.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Callable

from .pipeline import PipelineConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    return float(text)


def _opt_int(text: str):
    return None if text.lower() == "auto" else int(text)


def _ints(n: int) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        parts = tuple(int(p) for p in text.split(","))
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated integers")
        return parts
    return parse


def _str(text: str) -> str:
    return text


# key -> (section, attribute, parser); section is None, "fusion" or "seeds"
FIELDS: dict[str, tuple[str | None, str, Callable]] = {
    "steps": (None, "steps", _int),
    "M1": (None, "M1", _int),
    "M2": (None, "M2", _int),
    "guidance_semantic": (None, "guidance_semantic", _float),
    "guidance_identity": (None, "guidance_identity", _float),
    "lambda_semantic": ("fusion", "lambda_semantic", _float),
    "lambda_identity": ("fusion", "lambda_identity", _float),
    "pool_factor": ("fusion", "pool_factor", _int),
    "c_mid": ("fusion", "c_mid", _opt_int),
    "K": (None, "K", _int),
    "N": (None, "N", _int),
    "D": (None, "D", _int),
    "seed_world": ("seeds", "world", _int),
    "seed_query": ("seeds", "query", _int),
    "seed_noise": ("seeds", "noise", _int),
    "seed_tokens": ("seeds", "tokens", _int),
    "target_identity": (None, "target_identity", _int),
    "target_scene": (None, "target_scene", _int),
    "image_shape": (None, "image_shape", _ints(3)),
    "face_region": (None, "face_region", _ints(4)),
    "n_scenes": (None, "n_scenes", _int),
    "n_identities": (None, "n_identities", _int),
    "data_variance": (None, "data_variance", _float),
    "closeup_scale": (None, "closeup_scale", _int),
    "distractor_rms": (None, "distractor_rms", _float),
    "id_branch": (None, "id_branch", _str),
}


def _build(values: dict[str, object]) -> PipelineConfig:
    top, fusion, seeds = {}, {}, {}
    for key, value in values.items():
        section, attr, _ = FIELDS[key]
        {None: top, "fusion": fusion, "seeds": seeds}[section][attr] = value
    base = PipelineConfig()
    try:
        return replace(
            base,
            fusion=replace(base.fusion, **fusion) if fusion else base.fusion,
            seeds=replace(base.seeds, **seeds) if seeds else base.seeds,
            **top,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def parse_config_text(text: str) -> PipelineConfig:
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    unknown: list[tuple[str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, _, value = (part.strip() for part in line.partition("="))
        if not key or not value:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key not in FIELDS:
            unknown.append((key, lineno))
            continue
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno)
        try:
            values[key] = FIELDS[key][2](value)
        except ValueError:
            raise ConfigError(f"bad value {value!r} for {key!r}", lineno) from None
        lines[key] = lineno
    if unknown:
        listing = ", ".join(f"{k!r} (line {n})" for k, n in unknown)
        raise ConfigError(f"unknown keys: {listing}", unknown[0][1])
    return _build(values)


def parse_config(path: str | Path) -> PipelineConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_config(cfg: PipelineConfig) -> str:
    """Every key with its resolved value, in a fixed order."""
    out = []
    for key, (section, attr, _) in FIELDS.items():
        owner = cfg if section is None else getattr(cfg, section)
        out.append(f"{key} = {_format(getattr(owner, attr))}")
    return "\n".join(out) + "\n"

