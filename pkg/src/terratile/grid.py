"""Grid cells and bit-interleaved spatial keys.

Two grid families cover the globe:

* the z-grid: fixed cells of 1/48 degree (east-west) by 1/96 degree
  (north-south) in plain latitude/longitude, 17280 x 17280 cells total;
* the u-grid: per-UTM-zone cells of 1800 m (easting) by 1200 m (northing).

Both key a cell by bit-interleaving its two axis indices (a Morton / Z-order
code), so cells that are close on the ground share a common key prefix and
sort near each other.  All functions here are pure; nothing holds state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

INDEX_BITS = 15
INDEX_LIMIT = 1 << INDEX_BITS          # each axis index < 2^15
CODE_LIMIT = 1 << (2 * INDEX_BITS)     # interleaved code < 2^30

# z-grid geometry: 48 cells per degree of longitude, 96 per degree of latitude
ZGRID_LON_PER_DEG = 48
ZGRID_LAT_PER_DEG = 96
ZGRID_LON_CELLS = 360 * ZGRID_LON_PER_DEG   # 17280
ZGRID_LAT_CELLS = 180 * ZGRID_LAT_PER_DEG   # 17280

# u-grid geometry (per zone): cell is 1800 m east-west, 1200 m north-south,
# with the printed 400 m easting offset applied before quantizing.
UGRID_CELL_E_M = 1800.0
UGRID_CELL_N_M = 1200.0
UGRID_EASTING_OFFSET_M = 400.0
UGRID_EASTING_MAX_M = 1_000_000.0       # zone-plane easting band accepted here
UGRID_NORTHING_MAX_M = 9_600_000.0      # northern hemisphere only
UGRID_E_CELLS = int((UGRID_EASTING_MAX_M + UGRID_EASTING_OFFSET_M) // UGRID_CELL_E_M) + 1
UGRID_N_CELLS = int(UGRID_NORTHING_MAX_M // UGRID_CELL_N_M)


class GridRangeError(ValueError):
    """An index, code, or coordinate is outside its legal range."""


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude position in degrees.

    Latitude must lie in [-90, +90].  Longitude is normalized into the
    half-open interval [-180, +180); +180 wraps to -180.
    """

    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not math.isfinite(self.lat):
            raise GridRangeError(f"latitude {self.lat} outside [-90, 90]")
        if not math.isfinite(self.lon):
            raise GridRangeError(f"longitude {self.lon} is not finite")
        lon = math.fmod(self.lon + 180.0, 360.0)
        if lon < 0:
            lon += 360.0
        object.__setattr__(self, "lon", lon - 180.0)


@dataclass(frozen=True)
class UtmCoord:
    """A UTM position: zone number plus easting/northing in meters.

    Only the northern hemisphere is in scope, so northing counts meters
    north of the equator and must be non-negative.
    """

    zone: int
    easting: float
    northing: float

    def __post_init__(self):
        if not 1 <= self.zone <= 60:
            raise GridRangeError(f"zone {self.zone} outside 1..60")
        if not (0.0 <= self.easting < UGRID_EASTING_MAX_M):
            raise GridRangeError(f"easting {self.easting} outside [0, {UGRID_EASTING_MAX_M})")
        if not (0.0 <= self.northing < UGRID_NORTHING_MAX_M):
            raise GridRangeError(f"northing {self.northing} outside [0, {UGRID_NORTHING_MAX_M})")


@dataclass(frozen=True, order=True)
class ZGridId:
    """Interleaved key of one z-grid cell (30-bit Morton code)."""

    value: int

    def __post_init__(self):
        if not 0 <= self.value < CODE_LIMIT:
            raise GridRangeError(f"z-grid code {self.value} outside [0, 2^30)")

    @property
    def lon_index(self) -> int:
        return deinterleave(self.value)[0]

    @property
    def lat_index(self) -> int:
        return deinterleave(self.value)[1]

    @classmethod
    def from_indices(cls, lon_index: int, lat_index: int) -> "ZGridId":
        if not (0 <= lon_index < ZGRID_LON_CELLS and 0 <= lat_index < ZGRID_LAT_CELLS):
            raise GridRangeError(f"z-grid indices ({lon_index}, {lat_index}) out of range")
        return cls(interleave(lon_index, lat_index))


@dataclass(frozen=True, order=True)
class UGridId:
    """Key of one u-grid cell: UTM zone plus interleaved easting/northing indices.

    The zone is carried as a separate key component; the interleaved part is
    the Morton code of (easting index, northing index), which is what gives
    nearby cells a common prefix.
    """

    zone: int
    interleaved: int

    def __post_init__(self):
        if not 1 <= self.zone <= 60:
            raise GridRangeError(f"zone {self.zone} outside 1..60")
        if not 0 <= self.interleaved < CODE_LIMIT:
            raise GridRangeError(f"u-grid code {self.interleaved} outside [0, 2^30)")

    @property
    def easting_index(self) -> int:
        return deinterleave(self.interleaved)[0]

    @property
    def northing_index(self) -> int:
        return deinterleave(self.interleaved)[1]

    @classmethod
    def from_indices(cls, zone: int, easting_index: int, northing_index: int) -> "UGridId":
        if not (0 <= easting_index < UGRID_E_CELLS and 0 <= northing_index < UGRID_N_CELLS):
            raise GridRangeError(
                f"u-grid indices ({easting_index}, {northing_index}) out of range"
            )
        return cls(zone, interleave(easting_index, northing_index))


GridId = ZGridId | UGridId


@dataclass(frozen=True)
class CellExtent:
    """Ground footprint of one grid cell.

    Z-grid extents are in degrees (west/south inclusive, east/north
    exclusive).  U-grid extents are in zone-plane meters with the same
    half-open convention; ``zone`` is set only for u-grid cells.
    """

    west: float
    south: float
    east: float
    north: float
    zone: int | None = None

    @property
    def center(self) -> tuple[float, float]:
        return ((self.west + self.east) / 2.0, (self.south + self.north) / 2.0)


# ---------------------------------------------------------------------------
# Morton interleave
# ---------------------------------------------------------------------------

# Spread a 15-bit integer so bit i lands at bit 2i (magic-number dilation).
def _spread(n: int) -> int:
    n &= 0x7FFF
    n = (n | (n << 8)) & 0x00FF00FF
    n = (n | (n << 4)) & 0x0F0F0F0F
    n = (n | (n << 2)) & 0x33333333
    n = (n | (n << 1)) & 0x55555555
    return n


def _squash(n: int) -> int:
    n &= 0x55555555
    n = (n | (n >> 1)) & 0x33333333
    n = (n | (n >> 2)) & 0x0F0F0F0F
    n = (n | (n >> 4)) & 0x00FF00FF
    n = (n | (n >> 8)) & 0x0000FFFF
    return n


def interleave(u: int, v: int) -> int:
    """Merge two 15-bit indices into one 30-bit Morton code.

    Bit i of ``u`` lands at output bit 2i (even lanes), bit i of ``v`` at
    2i+1 (odd lanes).  By convention the first argument is the east-west
    index (longitude or easting) everywhere in this package.
    """
    if not (0 <= u < INDEX_LIMIT and 0 <= v < INDEX_LIMIT):
        raise GridRangeError(f"interleave inputs ({u}, {v}) must be in [0, 2^15)")
    return _spread(u) | (_spread(v) << 1)


def deinterleave(code: int) -> tuple[int, int]:
    """Split a 30-bit Morton code back into its (even-lane, odd-lane) indices."""
    if not 0 <= code < CODE_LIMIT:
        raise GridRangeError(f"code {code} must be in [0, 2^30)")
    return _squash(code), _squash(code >> 1)


# ---------------------------------------------------------------------------
# z-grid encoding
# ---------------------------------------------------------------------------

# Floor with a hair of upward slack so cell corners computed from extents
# (which divide by 48/96 and lose a few ulps) quantize into their own cell.
_EDGE_EPS = 1e-7


def _efloor(x: float) -> int:
    return int(math.floor(x + _EDGE_EPS))


def zgrid_indices(p: GeoPoint) -> tuple[int, int]:
    """Quantize a point to (lon index, lat index) on the z-grid.

    The north pole clamps onto the top row so every valid GeoPoint maps to
    a cell.
    """
    lon_index = _efloor((p.lon + 180.0) * ZGRID_LON_PER_DEG)
    lat_index = _efloor((p.lat + 90.0) * ZGRID_LAT_PER_DEG)
    lon_index = min(max(lon_index, 0), ZGRID_LON_CELLS - 1)
    lat_index = min(max(lat_index, 0), ZGRID_LAT_CELLS - 1)
    return lon_index, lat_index


def geo_to_zgrid(p: GeoPoint) -> ZGridId:
    lon_index, lat_index = zgrid_indices(p)
    return ZGridId(interleave(lon_index, lat_index))


def zgrid_to_extent(z: ZGridId) -> CellExtent:
    """Ground footprint of a z-grid cell, in degrees, half-open east/north."""
    lon_index, lat_index = deinterleave(z.value)
    west = lon_index / ZGRID_LON_PER_DEG - 180.0
    south = lat_index / ZGRID_LAT_PER_DEG - 90.0
    return CellExtent(
        west=west,
        south=south,
        east=(lon_index + 1) / ZGRID_LON_PER_DEG - 180.0,
        north=(lat_index + 1) / ZGRID_LAT_PER_DEG - 90.0,
    )


# ---------------------------------------------------------------------------
# u-grid encoding
# ---------------------------------------------------------------------------

def ugrid_indices(c: UtmCoord) -> tuple[int, int]:
    easting_index = _efloor((c.easting + UGRID_EASTING_OFFSET_M) / UGRID_CELL_E_M)
    northing_index = _efloor(c.northing / UGRID_CELL_N_M)
    return easting_index, northing_index


def utm_to_ugrid(c: UtmCoord) -> UGridId:
    easting_index, northing_index = ugrid_indices(c)
    return UGridId(c.zone, interleave(easting_index, northing_index))


def ugrid_to_extent(u: UGridId) -> CellExtent:
    """Ground footprint of a u-grid cell in zone-plane meters."""
    easting_index, northing_index = deinterleave(u.interleaved)
    west = easting_index * UGRID_CELL_E_M - UGRID_EASTING_OFFSET_M
    south = northing_index * UGRID_CELL_N_M
    return CellExtent(
        west=west,
        south=south,
        east=west + UGRID_CELL_E_M,
        north=south + UGRID_CELL_N_M,
        zone=u.zone,
    )


# ---------------------------------------------------------------------------
# neighbors and range enumeration
# ---------------------------------------------------------------------------

def neighbors(g: GridId) -> list[GridId]:
    """The up-to-8 cells adjacent to ``g`` in index space.

    Z-grid neighborhoods wrap in longitude and clamp at the poles; u-grid
    neighborhoods stay inside the zone plane, dropping cells that would
    fall outside it.
    """
    out: list[GridId] = []
    if isinstance(g, ZGridId):
        lon_index, lat_index = deinterleave(g.value)
        for dv in (-1, 0, 1):
            v = lat_index + dv
            if not 0 <= v < ZGRID_LAT_CELLS:
                continue
            for du in (-1, 0, 1):
                if du == 0 and dv == 0:
                    continue
                u = (lon_index + du) % ZGRID_LON_CELLS
                out.append(ZGridId(interleave(u, v)))
        return out
    easting_index, northing_index = deinterleave(g.interleaved)
    for dv in (-1, 0, 1):
        v = northing_index + dv
        if not 0 <= v < UGRID_N_CELLS:
            continue
        for du in (-1, 0, 1):
            if du == 0 and dv == 0:
                continue
            u = easting_index + du
            if not 0 <= u < UGRID_E_CELLS:
                continue
            out.append(UGridId(g.zone, interleave(u, v)))
    return out


def _axis_cells(lo, hi, west_of, per_unit, offset, max_cells) -> list[int]:
    """Indices whose half-open cell interval intersects [lo, hi).

    Candidates come from quantizing the endpoints; the final test compares
    against the canonical cell-edge expression (``west_of``) so boundary
    behavior is bit-identical with the extent functions.
    """
    if hi <= lo:
        return []
    first = int(math.floor((lo + offset) * per_unit)) - 1
    last = int(math.floor((hi + offset) * per_unit)) + 1
    out = []
    for u in range(max(first, 0), min(last, max_cells - 1) + 1):
        if west_of(u) < hi and west_of(u + 1) > lo:
            out.append(u)
    return out


def zgrid_range(west: float, south: float, east: float, north: float) -> list[ZGridId]:
    """All z-grid cells intersecting the half-open box, in ascending key order.

    The box may not cross the antimeridian; a degenerate box is empty.
    """
    lon_span = _axis_cells(
        west, east, lambda u: u / ZGRID_LON_PER_DEG - 180.0,
        ZGRID_LON_PER_DEG, 180.0, ZGRID_LON_CELLS,
    )
    lat_span = _axis_cells(
        south, north, lambda v: v / ZGRID_LAT_PER_DEG - 90.0,
        ZGRID_LAT_PER_DEG, 90.0, ZGRID_LAT_CELLS,
    )
    cells = [ZGridId(interleave(u, v)) for u in lon_span for v in lat_span]
    cells.sort(key=lambda z: z.value)
    return cells


def ugrid_range(zone: int, west: float, south: float, east: float, north: float) -> list[UGridId]:
    """All u-grid cells of ``zone`` intersecting the half-open box, ascending."""
    e_span = _axis_cells(
        west, east, lambda u: u * UGRID_CELL_E_M - UGRID_EASTING_OFFSET_M,
        1.0 / UGRID_CELL_E_M, UGRID_EASTING_OFFSET_M, UGRID_E_CELLS,
    )
    n_span = _axis_cells(
        south, north, lambda v: v * UGRID_CELL_N_M,
        1.0 / UGRID_CELL_N_M, 0.0, UGRID_N_CELLS,
    )
    cells = [UGridId(zone, interleave(u, v)) for u in e_span for v in n_span]
    cells.sort(key=lambda g: g.interleaved)
    return cells


def zgrid_cell_count() -> int:
    """Total number of distinct z-grid cells on earth."""
    return ZGRID_LON_CELLS * ZGRID_LAT_CELLS


# ---------------------------------------------------------------------------
# printable grid ids (URLs, filenames, CLI)
# ---------------------------------------------------------------------------

def format_gridid(g: GridId) -> str:
    """Canonical string form: ``z0123456789`` or ``u<zone>-0123456789``."""
    if isinstance(g, ZGridId):
        return f"z{g.value:010d}"
    return f"u{g.zone:02d}-{g.interleaved:010d}"


def parse_gridid(s: str) -> GridId:
    """Inverse of :func:`format_gridid`; raises GridRangeError on bad input."""
    try:
        if s.startswith("z"):
            return ZGridId(int(s[1:], 10))
        if s.startswith("u"):
            zone_s, code_s = s[1:].split("-", 1)
            return UGridId(int(zone_s, 10), int(code_s, 10))
    except (ValueError, IndexError) as exc:
        raise GridRangeError(f"malformed grid id {s!r}") from exc
    raise GridRangeError(f"malformed grid id {s!r}")
