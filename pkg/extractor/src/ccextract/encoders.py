"""Pluggable dual encoders mapping images and texts onto one unit sphere.

The default encoder is a deterministic image-statistics model: color
histograms and a coarse luminance grid, pushed through a fixed random
projection.  Its text side embeds a class name by rendering a solid
prototype swatch of the named color and reusing the image path, so both
modalities genuinely share an embedding space.  It needs no downloaded
weights and is exactly reproducible, which is what the bank-interop and
retrieval sanity checks require; swapping in a stronger pretrained encoder
only means implementing the two methods of `Encoder`.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np
from PIL import Image

# CSS-style primaries; enough to label salient-object scenes.
COLOR_VOCAB = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (50, 80, 220),
    "yellow": (230, 220, 50),
    "orange": (240, 150, 40),
    "purple": (150, 60, 200),
    "cyan": (60, 200, 210),
    "magenta": (220, 60, 180),
    "brown": (140, 90, 50),
    "pink": (240, 160, 190),
    "olive": (130, 130, 40),
    "teal": (40, 130, 130),
    "navy": (30, 40, 110),
    "maroon": (130, 40, 50),
    "lime": (170, 230, 80),
    "black": (25, 25, 25),
    "white": (235, 235, 235),
}


class Encoder(Protocol):
    name: str
    dim: int

    def encode_images(self, images: list[np.ndarray]) -> np.ndarray:
        """(h,w,3) uint8 arrays -> (n, dim) unit-norm float32 rows."""
        ...

    def encode_texts(self, names: list[str]) -> np.ndarray:
        """class names -> (n, dim) unit-norm float32 rows."""
        ...


class ColorStatEncoder:
    """Deterministic histogram/luminance encoder with a color-word text side."""

    HIST_BINS = 8      # per channel
    GRID = 6           # luminance grid side
    INPUT_SIZE = 48    # crops are resized to this before encoding

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 8:
            raise ValueError(f"encoder dim must be >= 8, got {dim}")
        self.name = f"color-stat-{dim}"
        self.dim = dim
        raw = 3 * self.HIST_BINS + self.GRID * self.GRID + 3
        rng = np.random.default_rng(seed)
        # fixed projection: part of the encoder definition, not run state
        self._proj = rng.standard_normal((raw, dim)) / np.sqrt(raw)

    def _features(self, image: np.ndarray) -> np.ndarray:
        img = Image.fromarray(image).resize((self.INPUT_SIZE, self.INPUT_SIZE),
                                            Image.BILINEAR)
        x = np.asarray(img, dtype=np.float64) / 255.0
        hists = [np.histogram(x[..., c], bins=self.HIST_BINS, range=(0.0, 1.0),
                              density=True)[0] for c in range(3)]
        lum = x.mean(axis=-1)
        g = self.GRID
        cell = self.INPUT_SIZE // g
        grid = lum[: g * cell, : g * cell].reshape(g, cell, g, cell).mean(axis=(1, 3))
        return np.concatenate([np.concatenate(hists), grid.ravel(), x.mean(axis=(0, 1))])

    def encode_images(self, images: list[np.ndarray]) -> np.ndarray:
        if not images:
            return np.zeros((0, self.dim), dtype=np.float32)
        raw = np.stack([self._features(im) for im in images])
        out = raw @ self._proj
        out /= np.linalg.norm(out, axis=1, keepdims=True)
        return out.astype(np.float32)

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        swatches = []
        for prompt in prompts:
            words = [w.strip(".,!?") for w in prompt.lower().split()]
            known = [w for w in words if w in COLOR_VOCAB]
            if len(known) != 1:
                raise KeyError(f"prompt {prompt!r} must mention exactly one of "
                               f"{', '.join(sorted(COLOR_VOCAB))}")
            swatch = np.full((self.INPUT_SIZE, self.INPUT_SIZE, 3),
                             COLOR_VOCAB[known[0]], dtype=np.uint8)
            swatches.append(swatch)
        return self.encode_images(swatches)


_REGISTRY = {"color-stat": ColorStatEncoder}


def get_encoder(name: str, dim: int = 64, seed: int = 0) -> Encoder:
    if name not in _REGISTRY:
        raise KeyError(f"unknown encoder {name!r}; available: {sorted(_REGISTRY)}")
    return _REGISTRY[name](dim=dim, seed=seed)
