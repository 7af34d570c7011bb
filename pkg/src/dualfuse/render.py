"""PNG, CSV and JSON artifact writers with byte-stable output."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image


class OutputError(OSError):
    pass


def to_uint8(image: np.ndarray) -> tuple[np.ndarray, float]:
    """Map a (C, H, W) image to uint8 with ``v -> 127.5 * v / vmax + 127.5``.

    Rounding is half-up and ``vmax = max |v|`` (an all-zero image maps to 128).
    """
    image = np.asarray(image, dtype=np.float64)
    vmax = float(np.max(np.abs(image))) if image.size else 0.0
    scaled = image / vmax if vmax > 0 else np.zeros_like(image)
    q = np.floor(127.5 * scaled + 127.5 + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8), vmax


def from_uint8(pixels: np.ndarray, vmax: float) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float64) - 127.5) / 127.5 * vmax


def _save(img: Image.Image, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        img.save(path, format="PNG")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_image_png(image: np.ndarray, path: Path) -> float:
    pixels, vmax = to_uint8(image)
    if pixels.shape[0] == 3:
        img = Image.fromarray(np.ascontiguousarray(pixels.transpose(1, 2, 0)))
    elif pixels.shape[0] == 1:
        img = Image.fromarray(pixels[0])
    else:
        raise ValueError(f"cannot render {pixels.shape[0]} channels")
    _save(img, path)
    return vmax


def write_mask_png(mask: np.ndarray, path: Path) -> None:
    """(H, W) decision mask: 0 = semantic (black), 1 = identity (white)."""
    mask = np.asarray(mask)
    _save(Image.fromarray(np.where(mask > 0, 255, 0).astype(np.uint8)), path)


def write_grid_png(images: Sequence[np.ndarray], path: Path, upscale: int = 4, gap: int = 1) -> None:
    """Side-by-side contact sheet of (3, H, W) images, each with its own vmax."""
    tiles = [np.kron(to_uint8(im)[0].transpose(1, 2, 0), np.ones((upscale, upscale, 1), np.uint8))
             for im in images]
    h, w = tiles[0].shape[:2]
    sheet = np.zeros((h, len(tiles) * (w + gap) - gap, 3), dtype=np.uint8)
    for i, tile in enumerate(tiles):
        sheet[:, i * (w + gap): i * (w + gap) + w] = tile
    _save(Image.fromarray(sheet), path)


def write_text(text: str, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def dump_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"


def render_outputs(samples: np.ndarray, masks: Sequence[np.ndarray | None], out_dir: str | Path,
                   prefix: str = "", csv_text: str | None = None) -> dict:
    """Write one PNG per sample plus its decision mask; returns per-file metadata.

    ``samples`` is (B, 3, H, W). Files land in ``out_dir`` as ``<prefix>sample_<i>.png``
    and ``<prefix>mask_<i>.png``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 4:
        raise ValueError(f"expected (B, 3, H, W) samples, got {samples.shape}")
    out_dir = Path(out_dir)
    written: dict[str, dict] = {}
    for i, sample in enumerate(samples):
        name = f"{prefix}sample_{i}.png"
        written[name] = {"vmax": write_image_png(sample, out_dir / name)}
        mask = masks[i] if i < len(masks) else None
        if mask is not None:
            mname = f"{prefix}mask_{i}.png"
            write_mask_png(mask, out_dir / mname)
            written[mname] = {}
    if csv_text is not None:
        cname = f"{prefix}metrics.csv"
        write_text(csv_text, out_dir / cname)
        written[cname] = {}
    return written
