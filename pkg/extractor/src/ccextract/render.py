"""Tiny scene renderer for demos and encoder sanity checks.

Draws one or more solid rectangles on a speckled gray background; enough
to produce labeled salient-object images without any dataset downloads.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import COLOR_VOCAB


def render_scene(
    side: int,
    objects: list[tuple[str, tuple[int, int, int, int]]],
    seed: int = 0,
    bg_level: int = 128,
    speckle: float = 12.0,
) -> np.ndarray:
    """objects: (color name, (x0, y0, x1, y1)) rectangles, painted in order."""
    rng = np.random.default_rng(seed)
    img = np.clip(bg_level + speckle * rng.standard_normal((side, side, 3)),
                  0, 255).astype(np.uint8)
    for color, (x0, y0, x1, y1) in objects:
        if color not in COLOR_VOCAB:
            raise KeyError(f"unknown color {color!r}")
        if not (0 <= x0 < x1 <= side and 0 <= y0 < y1 <= side):
            raise ValueError(f"box {(x0, y0, x1, y1)} outside {side}x{side} frame")
        img[y0:y1, x0:x1] = COLOR_VOCAB[color]
    return img


def save_png(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    Image.fromarray(image).save(path)
    return path
