"""Deterministic synthetic imagery.

The original system ingested tape archives of aerial photography; at desk
scale the test fixtures and demos need source rasters with similar texture
statistics.  ``aerial_texture`` layers band-limited value noise, field
boundaries, an optics blur, and bounded film grain into something JPEG
treats like low-altitude photography.  Everything is seeded and
reproducible.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def _octave(rng: np.random.Generator, w: int, h: int, cells: int) -> np.ndarray:
    """One band of value noise: a coarse random grid smoothly upsampled."""
    gw, gh = max(cells, 2), max(cells * h // max(w, 1), 2)
    grid = rng.random((gh, gw), dtype=np.float64)
    img = Image.fromarray((grid * 255).astype(np.uint8), mode="L")
    return np.asarray(img.resize((w, h), resample=Image.Resampling.BILINEAR)) / 255.0


def _blur3(a: np.ndarray) -> np.ndarray:
    # separable [1 2 1]/4 kernel: stands in for the optics/film MTF and
    # keeps the high-frequency content inside what JPEG q80 tracks closely
    k = np.array([0.25, 0.5, 0.25])
    for axis in (0, 1):
        a = np.apply_along_axis(lambda m: np.convolve(m, k, mode="same"), axis, a)
    return a


def aerial_texture(width: int, height: int, seed: int = 0) -> np.ndarray:
    """A natural-looking grayscale field (terrain-like, not flat or random)."""
    rng = np.random.default_rng(seed)
    acc = np.zeros((height, width))
    amp_total = 0.0
    for cells, amp in ((4, 1.0), (12, 0.55), (36, 0.35), (90, 0.22), (260, 0.14)):
        acc += amp * _octave(rng, width, height, cells)
        amp_total += amp
    acc /= amp_total

    # field boundaries: a few hard horizontal/vertical luminance steps
    nlines = max(2, (width + height) // 700)
    for _ in range(nlines):
        if rng.random() < 0.5:
            x = int(rng.integers(0, width))
            acc[:, x:] += rng.uniform(-0.08, 0.08)
        else:
            y = int(rng.integers(0, height))
            acc[y:, :] += rng.uniform(-0.08, 0.08)

    acc += rng.uniform(-0.09, 0.09, size=acc.shape)
    acc = _blur3(acc)
    acc += rng.uniform(-0.025, 0.025, size=acc.shape)  # grain survives the MTF

    lo, hi = acc.min(), acc.max()
    norm = (acc - lo) / (hi - lo) if hi > lo else np.zeros_like(acc)
    return (20 + norm * 210).astype(np.uint8)
