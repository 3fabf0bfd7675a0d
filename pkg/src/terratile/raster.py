"""Grayscale raster primitives: anchored source images, resampling, mosaics.

Pixels everywhere are 8-bit grayscale numpy arrays, row-major, row 0 at the
north edge.  White (255) doubles as the no-data fill value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from PIL import Image

NO_DATA = 255

USGS_SCALE_M = 1.0
SPIN2_SCALE_M = 1.56


class Theme(str, enum.Enum):
    """Imagery source family; fixes grid system and pixel scale."""

    USGS = "usgs"
    SPIN2 = "spin2"

    @property
    def scale_m(self) -> float:
        return USGS_SCALE_M if self is Theme.USGS else SPIN2_SCALE_M


class RasterFormatError(ValueError):
    """Raster shape, dtype, or declared geometry is unusable."""


@dataclass(frozen=True)
class UtmAnchor:
    """Zone-plane position of a raster's top-left pixel corner."""

    zone: int
    easting: float
    northing: float


@dataclass(frozen=True)
class GeoAnchor:
    """Latitude/longitude of a raster's top-left pixel corner."""

    lat: float
    lon: float


@dataclass
class Raster:
    """One geo-anchored grayscale image.

    ``anchor`` locates the top-left pixel corner; ``pixel_scale_m`` is the
    ground size of one pixel (1 m for USGS sources, 1.56 m for SPIN2).
    """

    pixels: np.ndarray
    anchor: UtmAnchor | GeoAnchor
    pixel_scale_m: float

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.dtype != np.uint8:
            raise RasterFormatError("pixels must be a 2-D uint8 array")
        if self.pixels.size == 0:
            raise RasterFormatError("raster has no pixels")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def resample_box(pixels: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Area-weighted (box filter) downsample to an exact output size.

    For integer shrink factors this is the plain block mean; fractional
    factors weight source pixels by coverage.  Constant inputs stay
    constant and mean brightness drifts by at most one gray level.
    """
    if out_w <= 0 or out_h <= 0:
        raise RasterFormatError(f"bad output size {out_w}x{out_h}")
    img = Image.fromarray(pixels, mode="L")
    return np.asarray(img.resize((out_w, out_h), resample=Image.Resampling.BOX))


def mosaic(tiles: list[list[np.ndarray]]) -> np.ndarray:
    """Concatenate a rectangular grid of equally sized tiles, row-major."""
    if not tiles or not tiles[0]:
        raise RasterFormatError("empty tile grid")
    ncols = len(tiles[0])
    shape = tiles[0][0].shape
    for row in tiles:
        if len(row) != ncols or any(t.shape != shape for t in row):
            raise RasterFormatError("ragged tile grid")
    return np.block(tiles)
