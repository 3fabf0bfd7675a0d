"""Cutting rasters into grid cells and building the four-level image pyramid.

A *cut* is one grid cell's full-resolution raster: exactly 1800x1200 px for
USGS cells (1 m/px on the UTM plane), latitude-dependent dimensions for
SPIN2 cells (1.56 m/px over a 1/48 x 1/96 degree cell).  Each cut yields:

* full-resolution tiles: an 8x8 slice for USGS (225x150 px each), 5x5 for
  SPIN2;
* a browse image near 8 m/px, a thumb near 16 m/px, and a jump near
  32 m/px, produced by successive box-filter downsampling.

That is 64 + 3 = 67 encoded images per USGS cut and 25 + 3 = 28 per SPIN2
cut.  SPIN2 full-resolution tiles are lightly encrypted before leaving this
module; everything coarser stays open.
"""

from __future__ import annotations

import datetime as dt
import enum
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import tilecrypt
from .grid import (
    GeoPoint,
    UGridId,
    UtmCoord,
    ZGridId,
    format_gridid,
    ugrid_range,
    ugrid_to_extent,
    zgrid_range,
    zgrid_to_extent,
)
from .raster import (
    GeoAnchor,
    NO_DATA,
    Raster,
    RasterFormatError,
    Theme,
    UtmAnchor,
    mosaic,
    resample_box,
)

METERS_PER_DEG_LAT = 111_320.0
SPIN2_SCALE = Theme.SPIN2.scale_m

USGS_CUT_W = 1800
USGS_CUT_H = 1200
USGS_TILE_GRID = 8   # 8x8 slice -> 225x150 px tiles
SPIN2_TILE_GRID = 5  # 5x5 slice

JPEG_QUALITY = 80
JPEG_FALLBACK_QUALITY = 70
TILE_SOFT_BUDGET = 10 * 1024
TILE_HARD_CAP = 16 * 1024


class PyramidLevel(str, enum.Enum):
    TILE = "tile"      # full resolution
    BROWSE = "browse"  # ~8 m/px
    THUMB = "thumb"    # ~16 m/px
    JUMP = "jump"      # ~32 m/px


@dataclass(frozen=True)
class SourceImage:
    """An ingest unit: a geo-anchored raster plus its provenance."""

    raster: Raster
    theme: Theme
    acquired: dt.date
    source_id: str


@dataclass
class Cut:
    """One grid cell's full-resolution raster."""

    theme: Theme
    grid_id: UGridId | ZGridId
    pixels: np.ndarray
    acquired: dt.date

    def __post_init__(self):
        h, w = self.pixels.shape
        if self.theme is Theme.USGS and (w, h) != (USGS_CUT_W, USGS_CUT_H):
            raise RasterFormatError(f"USGS cut must be {USGS_CUT_W}x{USGS_CUT_H}, got {w}x{h}")
        grid = tile_grid_of(self.theme)
        if w % grid or h % grid:
            raise RasterFormatError(f"cut {w}x{h} not divisible into {grid}x{grid} tiles")


@dataclass(frozen=True)
class EncodedTile:
    """One JPEG product of a cut, ready for storage."""

    blob: bytes
    level: PyramidLevel
    sub_row: int
    sub_col: int
    encrypted: bool = False
    key_id: str | None = None


def tile_grid_of(theme: Theme) -> int:
    return USGS_TILE_GRID if theme is Theme.USGS else SPIN2_TILE_GRID


def spin2_cut_size(cell_center_lat: float) -> tuple[int, int]:
    """Pixel dimensions of a SPIN2 cut at a given cell-center latitude.

    Width tracks the shrinking ground length of 1/48 degree of longitude;
    both axes are rounded to multiples of 5 so the 5x5 slice is exact.
    """
    mpd_lon = METERS_PER_DEG_LAT * math.cos(math.radians(cell_center_lat))
    w = SPIN2_TILE_GRID * round(mpd_lon / 48.0 / SPIN2_SCALE / SPIN2_TILE_GRID)
    h = SPIN2_TILE_GRID * round(METERS_PER_DEG_LAT / 96.0 / SPIN2_SCALE / SPIN2_TILE_GRID)
    return max(w, SPIN2_TILE_GRID), max(h, SPIN2_TILE_GRID)


# ---------------------------------------------------------------------------
# cutting
# ---------------------------------------------------------------------------

def _merge_order(sources: list[SourceImage]) -> list[SourceImage]:
    # painted in ascending order, so the newest acquisition wins a pixel;
    # equal dates fall back to source-id order (later id painted last)
    return sorted(sources, key=lambda s: (s.acquired, s.source_id))


def _paint(canvas: np.ndarray, src: np.ndarray, row_off: int, col_off: int) -> bool:
    """Copy src onto canvas at an offset, skipping no-data (255) pixels."""
    h, w = canvas.shape
    sh, sw = src.shape
    r0, c0 = max(0, row_off), max(0, col_off)
    r1, c1 = min(h, row_off + sh), min(w, col_off + sw)
    if r0 >= r1 or c0 >= c1:
        return False
    region = src[r0 - row_off:r1 - row_off, c0 - col_off:c1 - col_off]
    mask = region != NO_DATA
    canvas[r0:r1, c0:c1][mask] = region[mask]
    return True


def cut_usgs(sources: list[SourceImage], zone: int) -> list[Cut]:
    """Merge USGS sources and emit one cut per covered u-grid cell.

    Sources must be north-up 1 m/px rasters anchored in ``zone``.  Where
    sources overlap, the newest acquisition wins pixelwise; white source
    pixels are treated as no-data and never overwrite.  Uncovered canvas
    stays white.
    """
    for s in sources:
        if s.theme is not Theme.USGS or s.raster.pixel_scale_m != Theme.USGS.scale_m:
            raise RasterFormatError(f"source {s.source_id}: not a 1 m/px USGS raster")
        if not isinstance(s.raster.anchor, UtmAnchor) or s.raster.anchor.zone != zone:
            raise RasterFormatError(f"source {s.source_id}: anchor not in zone {zone}")

    cells: set[UGridId] = set()
    for s in sources:
        a = s.raster.anchor
        cells.update(
            ugrid_range(
                zone,
                a.easting,
                a.northing - s.raster.height,
                a.easting + s.raster.width,
                a.northing,
            )
        )

    ordered = _merge_order(sources)
    cuts = []
    for cell in sorted(cells, key=lambda g: g.interleaved):
        ext = ugrid_to_extent(cell)
        canvas = np.full((USGS_CUT_H, USGS_CUT_W), NO_DATA, dtype=np.uint8)
        touched: list[SourceImage] = []
        for s in ordered:
            a = s.raster.anchor
            row_off = round(ext.north - a.northing)
            col_off = round(a.easting - ext.west)
            if _paint(canvas, s.raster.pixels, row_off, col_off):
                touched.append(s)
        if touched:
            acquired = max(s.acquired for s in touched)
            cuts.append(Cut(Theme.USGS, cell, canvas, acquired))
    return cuts


def cut_spin2(
    sources: list[SourceImage],
    lat_band: tuple[float, float] | None = None,
) -> list[Cut]:
    """Merge SPIN2 sources and emit one cut per covered z-grid cell.

    Merge semantics match :func:`cut_usgs`.  Source pixels are copied onto
    the cut's pixel lattice at the nearest whole-pixel offset; inputs are
    expected to be pre-rectified north-up 1.56 m/px rasters, so the offset
    rounding is at most half a pixel.  ``lat_band`` (south, north) limits
    which cells are emitted.
    """
    for s in sources:
        if s.theme is not Theme.SPIN2 or s.raster.pixel_scale_m != Theme.SPIN2.scale_m:
            raise RasterFormatError(f"source {s.source_id}: not a 1.56 m/px SPIN2 raster")
        if not isinstance(s.raster.anchor, GeoAnchor):
            raise RasterFormatError(f"source {s.source_id}: needs a lat/lon anchor")

    def footprint(s: SourceImage) -> tuple[float, float, float, float]:
        a = s.raster.anchor
        dlat = s.raster.height * SPIN2_SCALE / METERS_PER_DEG_LAT
        center_lat = a.lat - dlat / 2.0
        dlon = s.raster.width * SPIN2_SCALE / (
            METERS_PER_DEG_LAT * math.cos(math.radians(center_lat))
        )
        return a.lon, a.lat - dlat, a.lon + dlon, a.lat

    cells: set[ZGridId] = set()
    for s in sources:
        w, s_, e, n = footprint(s)
        cells.update(zgrid_range(w, s_, e, n))

    ordered = _merge_order(sources)
    cuts = []
    for cell in sorted(cells, key=lambda g: g.value):
        ext = zgrid_to_extent(cell)
        center_lat = (ext.south + ext.north) / 2.0
        if lat_band is not None and not (lat_band[0] <= center_lat < lat_band[1]):
            continue
        cut_w, cut_h = spin2_cut_size(center_lat)
        deg_px_lon = (ext.east - ext.west) / cut_w
        deg_px_lat = (ext.north - ext.south) / cut_h
        canvas = np.full((cut_h, cut_w), NO_DATA, dtype=np.uint8)
        touched: list[SourceImage] = []
        for s in ordered:
            a = s.raster.anchor
            row_off = round((ext.north - a.lat) / deg_px_lat)
            col_off = round((a.lon - ext.west) / deg_px_lon)
            if _paint(canvas, s.raster.pixels, row_off, col_off):
                touched.append(s)
        if touched:
            acquired = max(s.acquired for s in touched)
            cuts.append(Cut(Theme.SPIN2, cell, canvas, acquired))
    return cuts


# ---------------------------------------------------------------------------
# slicing and the pyramid
# ---------------------------------------------------------------------------

def slice_grid(cut: Cut) -> list[list[np.ndarray]]:
    """Partition a cut into its full-resolution tile grid (views, row-major).

    ``mosaic(slice_grid(cut))`` reproduces the cut exactly; every pixel
    belongs to exactly one tile.
    """
    grid = tile_grid_of(cut.theme)
    h, w = cut.pixels.shape
    th, tw = h // grid, w // grid
    return [
        [cut.pixels[r * th:(r + 1) * th, c * tw:(c + 1) * tw] for c in range(grid)]
        for r in range(grid)
    ]


def build_pyramid(cut: Cut) -> dict[PyramidLevel, np.ndarray]:
    """Downsample a cut to its browse (~8 m), thumb (~16 m), jump (~32 m) rasters.

    USGS shrinks by exactly 8 to browse; SPIN2 browse dimensions come from
    the ~5.13x ground-scale ratio.  Thumb and jump each halve the previous
    level, flooring odd dimensions (so USGS runs 225x150 -> 112x75 -> 56x37).
    """
    h, w = cut.pixels.shape
    if cut.theme is Theme.USGS:
        bw, bh = w // 8, h // 8
    else:
        bw = max(round(w * SPIN2_SCALE / 8.0), 1)
        bh = max(round(h * SPIN2_SCALE / 8.0), 1)
    browse = resample_box(cut.pixels, bw, bh)
    thumb = resample_box(browse, max(bw // 2, 1), max(bh // 2, 1))
    jump = resample_box(thumb, max(bw // 4, 1), max(bh // 4, 1))
    return {PyramidLevel.BROWSE: browse, PyramidLevel.THUMB: thumb, PyramidLevel.JUMP: jump}


def encode_jpeg(pixels: np.ndarray, quality: int = JPEG_QUALITY) -> bytes:
    """Encode an 8-bit grayscale array as baseline JFIF."""
    if pixels.ndim != 2 or 0 in pixels.shape:
        raise RasterFormatError(f"cannot encode shape {pixels.shape}")
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels), mode="L").save(
        buf, format="JPEG", quality=quality
    )
    return buf.getvalue()


def decode_jpeg(blob: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(blob)) as img:
        return np.asarray(img.convert("L"))


def _encode_budgeted(pixels: np.ndarray) -> bytes:
    blob = encode_jpeg(pixels, JPEG_QUALITY)
    if len(blob) > TILE_HARD_CAP:
        blob = encode_jpeg(pixels, JPEG_FALLBACK_QUALITY)  # accepted regardless
    return blob


def tile_nonce(gridid: str, level: PyramidLevel, sub_row: int, sub_col: int,
               acquired_iso: str) -> bytes:
    """Per-tile keystream nonce, reconstructible from the tile's identity."""
    return f"{gridid}/{level.value}/{sub_row}/{sub_col}/{acquired_iso}".encode()


def encode_cut(cut: Cut) -> list[EncodedTile]:
    """Produce every encoded image of a cut.

    USGS: 64 open tiles + browse + thumb + jump (67 products).
    SPIN2: 25 encrypted tiles + 3 open pyramid images (28 products).
    """
    products: list[EncodedTile] = []
    encrypting = cut.theme is Theme.SPIN2
    gid = format_gridid(cut.grid_id)
    acquired_iso = cut.acquired.isoformat()
    if encrypting:
        key = tilecrypt.derive_cut_key(cut.theme.value, gid, acquired_iso)
        kid = tilecrypt.key_id(key)
    for r, row in enumerate(slice_grid(cut)):
        for c, tile in enumerate(row):
            blob = _encode_budgeted(tile)
            if encrypting:
                nonce = tile_nonce(gid, PyramidLevel.TILE, r, c, acquired_iso)
                blob = tilecrypt.light_encrypt(blob, key, nonce)
                products.append(EncodedTile(blob, PyramidLevel.TILE, r, c, True, kid))
            else:
                products.append(EncodedTile(blob, PyramidLevel.TILE, r, c))
    for level, pixels in build_pyramid(cut).items():
        products.append(EncodedTile(_encode_budgeted(pixels), level, 0, 0))
    return products


def cut_key(cut: Cut) -> bytes:
    """The deterministic encryption key of a SPIN2 cut (stored in metadata)."""
    return tilecrypt.derive_cut_key(
        cut.theme.value, format_gridid(cut.grid_id), cut.acquired.isoformat()
    )


# ---------------------------------------------------------------------------
# ingest file format: raw grayscale raster + JSON sidecar
# ---------------------------------------------------------------------------

def load_source(raster_path: str | Path, sidecar_path: str | Path) -> SourceImage:
    """Read one ingest unit: bare uint8 pixels plus a JSON sidecar.

    Sidecar fields: theme, pixel_scale_m, width, height, anchor (either
    {lat, lon} or {zone, easting, northing}), acquired_date, source_id.
    """
    meta = json.loads(Path(sidecar_path).read_text())
    try:
        theme = Theme(meta["theme"])
        width, height = int(meta["width"]), int(meta["height"])
        anchor_raw = meta["anchor"]
        acquired = dt.date.fromisoformat(meta["acquired_date"])
        source_id = str(meta["source_id"])
        scale = float(meta["pixel_scale_m"])
    except (KeyError, ValueError) as exc:
        raise RasterFormatError(f"bad sidecar {sidecar_path}: {exc}") from exc
    raw = Path(raster_path).read_bytes()
    if len(raw) != width * height:
        raise RasterFormatError(
            f"{raster_path}: expected {width * height} bytes for {width}x{height}, got {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    if "zone" in anchor_raw:
        anchor = UtmAnchor(int(anchor_raw["zone"]), float(anchor_raw["easting"]),
                           float(anchor_raw["northing"]))
    else:
        anchor = GeoAnchor(float(anchor_raw["lat"]), float(anchor_raw["lon"]))
    return SourceImage(Raster(pixels.copy(), anchor, scale), theme, acquired, source_id)


def save_source(src: SourceImage, raster_path: str | Path, sidecar_path: str | Path) -> None:
    """Write an ingest unit in the raw + sidecar format (tests, demos, CLI)."""
    Path(raster_path).write_bytes(src.raster.pixels.tobytes())
    a = src.raster.anchor
    anchor = (
        {"zone": a.zone, "easting": a.easting, "northing": a.northing}
        if isinstance(a, UtmAnchor)
        else {"lat": a.lat, "lon": a.lon}
    )
    Path(sidecar_path).write_text(
        json.dumps(
            {
                "theme": src.theme.value,
                "pixel_scale_m": src.raster.pixel_scale_m,
                "width": src.raster.width,
                "height": src.raster.height,
                "anchor": anchor,
                "acquired_date": src.acquired.isoformat(),
                "source_id": src.source_id,
            },
            indent=2,
        )
    )


def dump_debug(cut: Cut, out_dir: str | Path) -> list[Path]:
    """Write every encoded image of a cut as {gridid}_{level}_{row}_{col}.jpg."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gid = format_gridid(cut.grid_id)
    paths = []
    for t in encode_cut(cut):
        blob = t.blob
        if t.encrypted:
            nonce = tile_nonce(gid, t.level, t.sub_row, t.sub_col, cut.acquired.isoformat())
            blob = tilecrypt.light_decrypt(blob, cut_key(cut), nonce)
        p = out / f"{gid}_{t.level.value}_{t.sub_row}_{t.sub_col}.jpg"
        p.write_bytes(blob)
        paths.append(p)
    return paths
