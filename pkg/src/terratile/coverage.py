"""Coverage map: a three-level world pyramid shaded where imagery exists.

Levels: ``planet`` (one image), ``continent`` (4x2 grid), ``region``
(16x8 grid); every image is 512x256 px of equirectangular world.  The base
map is a procedurally drawn graticule; cells with visible imagery paint
green rectangles at their projected positions.  Clicking is supported by
the inverse mapping from an image pixel back to latitude/longitude.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .grid import ugrid_to_extent, zgrid_to_extent, UtmCoord
from .raster import Theme
from .store import TileStore
from .utm import utm_to_geo

TILE_W, TILE_H = 512, 256
LEVELS = {"planet": (1, 1), "continent": (4, 2), "region": (16, 8)}
LEVEL_ORDER = ["planet", "continent", "region"]

_BASE = 230
_GRID_MINOR = 205
_GRID_MAJOR = 168
GREEN = (34, 139, 34)


class CoverageError(ValueError):
    pass


def level_grid(level: str) -> tuple[int, int]:
    try:
        return LEVELS[level]
    except KeyError:
        raise CoverageError(f"unknown coverage level {level!r}") from None


def tile_bounds(level: str, x: int, y: int) -> tuple[float, float, float, float]:
    """(west, south, east, north) of one coverage image; y=0 is the north row."""
    cols, rows = level_grid(level)
    if not (0 <= x < cols and 0 <= y < rows):
        raise CoverageError(f"tile ({x},{y}) outside {cols}x{rows}")
    lon_span = 360.0 / cols
    lat_span = 180.0 / rows
    west = -180.0 + x * lon_span
    north = 90.0 - y * lat_span
    return west, north - lat_span, west + lon_span, north


def pixel_to_geo(level: str, x: int, y: int, px: int, py: int) -> tuple[float, float]:
    """Latitude/longitude of a clicked pixel's center."""
    west, south, east, north = tile_bounds(level, x, y)
    if not (0 <= px < TILE_W and 0 <= py < TILE_H):
        raise CoverageError(f"pixel ({px},{py}) outside {TILE_W}x{TILE_H}")
    lon = west + (px + 0.5) / TILE_W * (east - west)
    lat = north - (py + 0.5) / TILE_H * (north - south)
    return lat, lon


def _base_map(west, south, east, north) -> np.ndarray:
    img = np.full((TILE_H, TILE_W, 3), _BASE, dtype=np.uint8)

    def lon_to_px(lon):
        return int((lon - west) / (east - west) * TILE_W)

    def lat_to_py(lat):
        return int((north - lat) / (north - south) * TILE_H)

    for lon in range(-180, 181, 15):
        if west <= lon <= east:
            x = min(max(lon_to_px(lon), 0), TILE_W - 1)
            img[:, x] = _GRID_MAJOR if lon % 90 == 0 else _GRID_MINOR
    for lat in range(-90, 91, 15):
        if south <= lat <= north:
            y = min(max(lat_to_py(lat), 0), TILE_H - 1)
            img[y, :] = _GRID_MAJOR if lat % 90 == 0 or lat == 0 else _GRID_MINOR
    return img


def _cell_geo_bbox(theme: Theme, grid) -> tuple[float, float, float, float]:
    if theme is Theme.SPIN2:
        ext = zgrid_to_extent(grid)
        return ext.west, ext.south, ext.east, ext.north
    ext = ugrid_to_extent(grid)
    sw = utm_to_geo(UtmCoord(grid.zone, ext.west, ext.south))
    ne = utm_to_geo(UtmCoord(grid.zone, max(ext.east - 1e-6, ext.west), ext.north))
    return (min(sw.lon, ne.lon), min(sw.lat, ne.lat),
            max(sw.lon, ne.lon), max(sw.lat, ne.lat))


def render_coverage(store: TileStore, level: str, x: int, y: int) -> bytes:
    """PNG of one coverage image with visible cells shaded green."""
    west, south, east, north = tile_bounds(level, x, y)
    img = _base_map(west, south, east, north)

    for theme in (Theme.USGS, Theme.SPIN2):
        for grid in store.visible_cells(theme):
            try:
                w, s, e, n = _cell_geo_bbox(theme, grid)
            except Exception:
                continue  # cells outside the projection band cannot be drawn
            if e < west or w > east or n < south or s > north:
                continue
            x0 = int((w - west) / (east - west) * TILE_W)
            x1 = int((e - west) / (east - west) * TILE_W)
            y0 = int((north - n) / (north - south) * TILE_H)
            y1 = int((north - s) / (north - south) * TILE_H)
            x1 = max(x1, x0 + 1)
            y1 = max(y1, y0 + 1)
            x0, x1 = max(x0, 0), min(x1, TILE_W)
            y0, y1 = max(y0, 0), min(y1, TILE_H)
            if x0 < x1 and y0 < y1:
                img[y0:y1, x0:x1] = GREEN

    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
