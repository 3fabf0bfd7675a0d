"""Place-name directory with images-first paged search.

The place table is denormalized: one row per alternate spelling, each row a
complete place record sharing the same place id.  Countries and states keep
their own alias tables (many spellings, one id).  Five composite orderings
over the place rows mirror the classic decision-support layout::

    akplace1  (img, alternate name, type)
    akplace2  (img, country, state, alternate name, type)
    akplace3  (img, country, state, type)
    akplace4  (img, country, alternate name, type)
    akplace5  (img, country, type)

plus direct place-id, u-grid, and z-grid lookups.  Image-bearing rows sort
first (the ``img`` rank encodes the image flag so that True orders early).
Search streams rows out of the chosen ordering and stops after one page
plus a single lookahead row; a cursor is the composite key of the last row
returned, so resuming never skips or repeats while the directory is
unchanged.

Index choice never affects results, only how many rows the walk touches:
every ordering appends (alternate name, type, row) after its listed
columns, and the two orderings that diverge from the output order once
their prefix is bound (akplace3 and akplace5 without a type criterion) fall
back to an ordered materialization cached per criteria.
"""

from __future__ import annotations

import base64
import bisect
import hashlib
import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path

from .grid import (
    GeoPoint,
    UGridId,
    UtmCoord,
    ZGridId,
    ZGRID_LAT_CELLS,
    ZGRID_LAT_PER_DEG,
    ZGRID_LON_CELLS,
    ZGRID_LON_PER_DEG,
    geo_to_zgrid,
    interleave,
    ugrid_to_extent,
    utm_to_ugrid,
    zgrid_indices,
    zgrid_to_extent,
)
from .raster import Theme
from .utm import MAX_LAT, geo_to_utm, utm_to_geo

import datetime as dt

METERS_PER_DEG_LAT = 111_320.0

FEATURE_TYPES = {
    1: "Airport/Railroad Station",
    2: "Bay/Gulf",
    3: "Cape/Peninsula",
    4: "City",
    5: "Hill/Mountain",
    6: "Island",
    7: "Lake",
    8: "Other Land Feature",
    9: "Other Water Feature",
    10: "Park/Beach",
    11: "Point of Interest",
    12: "River",
}

PAGE_SIZE = 10
NEAREST_RADIUS_M = 50_000.0
EARTH_RADIUS_M = 6_371_008.8
DEFAULT_COUNTRY = "USA"


class GazetteerLoadError(ValueError):
    """Source file malformed; message carries the offending line number."""


class QueryError(ValueError):
    """Search called without criteria or with an incompatible cursor."""


@dataclass
class PlaceRow:
    row_id: int
    place_id: int
    name: str
    alternate_name: str
    alt_folded: str
    country_id: int
    state_id: int | None
    feature_id: int
    lat: float
    lon: float
    zgrid: ZGridId
    ugrid: UGridId | None
    image_flag: bool = False
    usgs_date: dt.date | None = None
    spin2_date: dt.date | None = None

    @property
    def img_rank(self) -> int:
        return 0 if self.image_flag else 1  # image-bearing places sort early

    @property
    def output_key(self) -> tuple:
        return (self.img_rank, self.alt_folded, self.feature_id, self.row_id)


@dataclass
class SearchPage:
    rows: list[PlaceRow]
    next_cursor: str | None
    scanned: int = 0   # qualifying rows consumed from the ordered stream


@dataclass
class _Criteria:
    name: str | None
    country_id: int | None
    state_id: int | None
    feature_ids: frozenset | None   # None = no type criterion

    def fingerprint(self) -> str:
        raw = repr((self.name, self.country_id, self.state_id,
                    tuple(sorted(self.feature_ids)) if self.feature_ids else None))
        return hashlib.sha1(raw.encode()).hexdigest()[:10]


_STATE_NONE = -1


def _state_key(state_id: int | None) -> int:
    return _STATE_NONE if state_id is None else state_id


class Gazetteer:
    """In-memory place directory; single writer, snapshot-consistent readers."""

    def __init__(self):
        self._lock = threading.RLock()
        self.rows: list[PlaceRow] = []
        self.country_alias: dict[str, int] = {}     # folded alias -> country id
        self.country_names: dict[int, str] = {}     # id -> first-seen spelling
        self.state_alias: dict[tuple[int, str], int] = {}
        self.state_names: dict[int, str] = {}
        self._by_place_id: dict[int, list[int]] = {}
        self._by_zgrid: dict[int, list[int]] = {}
        self._by_ugrid: dict[tuple[int, int], list[int]] = {}
        self._indices: dict[str, list[tuple]] = {}
        self._version = 0
        self._dirty = True
        self._page_cache: dict[tuple, list[PlaceRow]] = {}

    # -- loading ---------------------------------------------------------

    def load_file(self, path: str | Path) -> dict:
        """Load ``place_id|name|alternate_name|country|state|feature_type_id|lat|lon``.

        Alternate spellings of one place arrive as separate lines sharing
        the place id; differing country or state spellings on those lines
        become aliases of the same country/state.  Any dangling reference
        aborts the load, reporting the line number.
        """
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        return self.load_lines(lines)

    def load_lines(self, lines) -> dict:
        with self._lock:
            next_country = max(self.country_names, default=0)
            next_state = max(self.state_names, default=0)
            place_country: dict[int, int] = {}
            place_state: dict[int, int | None] = {}
            for row in self.rows:
                place_country[row.place_id] = row.country_id
                place_state[row.place_id] = row.state_id

            loaded = 0
            for lineno, line in enumerate(lines, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("|")
                if len(parts) != 8:
                    raise GazetteerLoadError(f"line {lineno}: expected 8 fields, got {len(parts)}")
                pid_s, name, alt, country, state, feat_s, lat_s, lon_s = parts
                try:
                    place_id = int(pid_s)
                    feature_id = int(feat_s)
                    lat = float(lat_s)
                    lon = float(lon_s)
                except ValueError as exc:
                    raise GazetteerLoadError(f"line {lineno}: {exc}") from exc
                if feature_id not in FEATURE_TYPES:
                    raise GazetteerLoadError(
                        f"line {lineno}: feature type {feature_id} not in 1..12"
                    )
                if not (-90.0 <= lat <= 90.0):
                    raise GazetteerLoadError(f"line {lineno}: latitude {lat} out of range")
                if not country.strip():
                    raise GazetteerLoadError(f"line {lineno}: empty country")

                cfold = country.strip().casefold()
                bound = self.country_alias.get(cfold)
                if place_id in place_country:
                    cid = place_country[place_id]
                    if bound is not None and bound != cid:
                        raise GazetteerLoadError(
                            f"line {lineno}: country {country!r} already names a different country"
                        )
                    if bound is None:
                        self.country_alias[cfold] = cid   # new alias learned from shared place
                else:
                    if bound is None:
                        next_country += 1
                        bound = next_country
                        self.country_alias[cfold] = bound
                        self.country_names[bound] = country.strip()
                    cid = bound
                    place_country[place_id] = cid

                state = state.strip()
                if state:
                    sfold = (cid, state.casefold())
                    sid = self.state_alias.get(sfold)
                    prior = place_state.get(place_id)
                    if prior is not None and prior != _STATE_NONE and sid is not None and sid != prior:
                        raise GazetteerLoadError(
                            f"line {lineno}: state {state!r} already names a different state"
                        )
                    if sid is None:
                        if prior not in (None, _STATE_NONE):
                            sid = prior                    # alias of this place's state
                        else:
                            next_state += 1
                            sid = next_state
                            self.state_names[sid] = state
                        self.state_alias[sfold] = sid
                    place_state[place_id] = sid
                else:
                    sid = place_state.get(place_id)
                    sid = sid if sid not in (None, _STATE_NONE) else None
                    place_state.setdefault(place_id, _STATE_NONE if sid is None else sid)

                point = GeoPoint(lat, lon)
                zgrid = geo_to_zgrid(point)
                ugrid = None
                if abs(lat) <= MAX_LAT:
                    ugrid = utm_to_ugrid(geo_to_utm(point))
                row = PlaceRow(
                    row_id=len(self.rows), place_id=place_id, name=name,
                    alternate_name=alt, alt_folded=alt.casefold(),
                    country_id=cid, state_id=sid, feature_id=feature_id,
                    lat=lat, lon=lon, zgrid=zgrid, ugrid=ugrid,
                )
                self.rows.append(row)
                self._by_place_id.setdefault(place_id, []).append(row.row_id)
                self._by_zgrid.setdefault(zgrid.value, []).append(row.row_id)
                if ugrid is not None:
                    self._by_ugrid.setdefault((ugrid.zone, ugrid.interleaved), []).append(row.row_id)
                loaded += 1

            self._mark_dirty()
            return {
                "places": loaded,
                "countries": len(self.country_names),
                "states": len(self.state_names),
                "featureTypes": len({r.feature_id for r in self.rows}),
            }

    # -- index maintenance --------------------------------------------------

    def _mark_dirty(self):
        self._dirty = True
        self._version += 1
        self._page_cache.clear()

    def _ensure_indices(self):
        if not self._dirty:
            return
        defs = {
            "akplace1": lambda r: (r.img_rank, r.alt_folded, r.feature_id, r.row_id),
            "akplace2": lambda r: (r.img_rank, r.country_id, _state_key(r.state_id),
                                   r.alt_folded, r.feature_id, r.row_id),
            "akplace3": lambda r: (r.img_rank, r.country_id, _state_key(r.state_id),
                                   r.feature_id, r.alt_folded, r.row_id),
            "akplace4": lambda r: (r.img_rank, r.country_id, r.alt_folded,
                                   r.feature_id, r.row_id),
            "akplace5": lambda r: (r.img_rank, r.country_id, r.feature_id,
                                   r.alt_folded, r.row_id),
        }
        self._indices = {
            name: sorted((key(r) for r in self.rows))
            for name, key in defs.items()
        }
        self._dirty = False

    # -- criteria resolution ---------------------------------------------------

    def resolve_feature_ids(self, type_str: str) -> frozenset:
        """Feature-type ids whose description (or a slash component) matches."""
        q = type_str.strip().casefold()
        exact = {
            fid for fid, desc in FEATURE_TYPES.items()
            if desc.casefold() == q
            or any(part.strip().casefold() == q for part in desc.split("/"))
        }
        if exact:
            return frozenset(exact)
        return frozenset(
            fid for fid, desc in FEATURE_TYPES.items()
            if desc.casefold().startswith(q)
            or any(part.strip().casefold().startswith(q) for part in desc.split("/"))
        )

    def _resolve(self, name, state, country, feature_type) -> _Criteria | None:
        """None means a criterion failed to resolve: the result is empty."""
        if state and not country:
            country = DEFAULT_COUNTRY
        country_id = None
        if country:
            country_id = self.country_alias.get(country.strip().casefold())
            if country_id is None:
                return None
        state_id = None
        if state:
            state_id = self.state_alias.get((country_id, state.strip().casefold()))
            if state_id is None:
                return None
        feature_ids = None
        if feature_type:
            feature_ids = self.resolve_feature_ids(feature_type)
            if not feature_ids:
                return None
        return _Criteria(
            name=name.strip().casefold() if name else None,
            country_id=country_id, state_id=state_id, feature_ids=feature_ids,
        )

    def pick_index(self, name=None, state=None, country=None, feature_type=None,
                   place_id=None, grid=None) -> str:
        """Deterministic access-path choice; never affects result contents.

        Decision table over the resolved criteria (a state criterion implies
        the default country):

        ==========================  ==========
        criteria                    index
        ==========================  ==========
        place id                    placeId
        u-grid / z-grid cell        ugrid / zgrid
        country + state + name      akplace2
        country + state (no name)   akplace3
        country + name              akplace4
        country only (or + type)    akplace5
        name only (or + type)       akplace1
        type only                   akplace1
        ==========================  ==========
        """
        if place_id is not None:
            return "placeId"
        if grid is not None:
            return "ugrid" if isinstance(grid, UGridId) else "zgrid"
        if state and not country:
            country = DEFAULT_COUNTRY
        if country:
            if state:
                return "akplace2" if name else "akplace3"
            return "akplace4" if name else "akplace5"
        if name or feature_type:
            return "akplace1"
        raise QueryError("search needs at least one criterion")

    # -- search -------------------------------------------------------------------

    def search(self, name=None, state=None, country=None, feature_type=None,
               cursor: str | None = None, page_size: int = PAGE_SIZE) -> SearchPage:
        if not any((name, state, country, feature_type)):
            raise QueryError("search needs at least one criterion")
        index_name = self.pick_index(name=name, state=state, country=country,
                                     feature_type=feature_type)
        with self._lock:
            self._ensure_indices()
            crit = self._resolve(name, state, country, feature_type)
            if crit is None:
                return SearchPage(rows=[], next_cursor=None)
            after = self._decode_cursor(cursor, crit) if cursor else None
            rows, scanned, more_key = self._walk(index_name, crit, after, page_size)
            next_cursor = (
                self._encode_cursor(rows[-1].output_key, crit)
                if rows and more_key else None
            )
            return SearchPage(rows=rows, next_cursor=next_cursor, scanned=scanned)

    def _walk(self, index_name: str, crit: _Criteria, after: tuple | None, page_size: int):
        single_type = crit.feature_ids is not None and len(crit.feature_ids) == 1
        fid = next(iter(crit.feature_ids)) if single_type else None

        # bound columns per ordering, and whether the residual order within
        # that bound range already equals the output order
        if index_name == "akplace1":
            streaming = True
        elif index_name in ("akplace2", "akplace4"):
            streaming = True
        elif index_name == "akplace3":
            streaming = single_type
        else:  # akplace5
            streaming = single_type

        if streaming:
            return self._walk_streaming(index_name, crit, fid, after, page_size)
        return self._walk_sorted(index_name, crit, after, page_size)

    def _row_of(self, key: tuple) -> PlaceRow:
        return self.rows[key[-1]]

    def _stream_bounds(self, index_name: str, crit: _Criteria, fid, img: int):
        """Index-key interval [lo, hi) covering one img group's bound range.

        A tuple that is a strict prefix sorts before all of its extensions,
        so bumping the last bound integer yields an exact exclusive bound.
        """
        name = crit.name or ""
        if index_name == "akplace1":
            return (img, name), (img + 1,)
        if index_name == "akplace2":
            sk = _state_key(crit.state_id)
            return (img, crit.country_id, sk, name), (img, crit.country_id, sk + 1)
        if index_name == "akplace4":
            return (img, crit.country_id, name), (img, crit.country_id + 1)
        if index_name == "akplace3":
            sk = _state_key(crit.state_id)
            return (img, crit.country_id, sk, fid), (img, crit.country_id, sk, fid + 1)
        return (img, crit.country_id, fid), (img, crit.country_id, fid + 1)

    def _resume_key(self, index_name: str, crit: _Criteria, fid, after: tuple):
        img, alt, a_fid, row_id = after
        if index_name == "akplace1":
            return (img, alt, a_fid, row_id)
        if index_name == "akplace2":
            return (img, crit.country_id, _state_key(crit.state_id), alt, a_fid, row_id)
        if index_name == "akplace4":
            return (img, crit.country_id, alt, a_fid, row_id)
        if index_name == "akplace3":
            return (img, crit.country_id, _state_key(crit.state_id), fid, alt, row_id)
        return (img, crit.country_id, fid, alt, row_id)

    def _qualifies(self, row: PlaceRow, crit: _Criteria) -> bool:
        if crit.name is not None and not row.alt_folded.startswith(crit.name):
            return False
        if crit.country_id is not None and row.country_id != crit.country_id:
            return False
        if crit.state_id is not None and row.state_id != crit.state_id:
            return False
        if crit.feature_ids is not None and row.feature_id not in crit.feature_ids:
            return False
        return True

    def _walk_streaming(self, index_name, crit, fid, after, page_size):
        index = self._indices[index_name]
        out: list[PlaceRow] = []
        scanned = 0
        start_img = after[0] if after else 0
        for img in (0, 1):
            if img < start_img:
                continue
            lo, hi = self._stream_bounds(index_name, crit, fid, img)
            i = bisect.bisect_left(index, lo)
            if after is not None and img == after[0]:
                i = max(i, bisect.bisect_right(index, self._resume_key(index_name, crit, fid, after)))
            stop = bisect.bisect_left(index, hi)
            while i < stop:
                row = self._row_of(index[i])
                i += 1
                if crit.name is not None and not row.alt_folded.startswith(crit.name):
                    break  # alternate name is the next sort column: prefix exhausted
                if not self._qualifies(row, crit):
                    continue
                scanned += 1
                out.append(row)
                if len(out) > page_size:
                    return out[:page_size], scanned, out[-1].output_key
        return out, scanned, None

    def _walk_sorted(self, index_name, crit, after, page_size):
        cache_key = (crit.fingerprint(), self._version)
        ordered = self._page_cache.get(cache_key)
        if ordered is None:
            index = self._indices[index_name]
            rows = []
            for img in (0, 1):
                if index_name == "akplace3":
                    sk = _state_key(crit.state_id)
                    lo = (img, crit.country_id, sk)
                    hi = (img, crit.country_id, sk + 1)
                else:
                    lo = (img, crit.country_id)
                    hi = (img, crit.country_id + 1)
                i = bisect.bisect_left(index, lo)
                stop = bisect.bisect_left(index, hi)
                for key in index[i:stop]:
                    row = self._row_of(key)
                    if self._qualifies(row, crit):
                        rows.append(row)
            rows.sort(key=lambda r: r.output_key)
            if len(self._page_cache) > 32:
                self._page_cache.clear()
            self._page_cache[cache_key] = rows
            ordered = rows
        start = 0
        if after is not None:
            start = bisect.bisect_right([r.output_key for r in ordered], after)
        page = ordered[start:start + page_size]
        more = ordered[start + page_size:start + page_size + 1]
        return page, len(page) + len(more), (more[0].output_key if more else None)

    # -- cursors --------------------------------------------------------------

    def _encode_cursor(self, key: tuple, crit: _Criteria) -> str:
        payload = {"k": list(key), "f": crit.fingerprint(), "v": self._version}
        return base64.urlsafe_b64encode(json.dumps(payload).encode()).decode()

    def _decode_cursor(self, cursor: str, crit: _Criteria) -> tuple:
        try:
            payload = json.loads(base64.urlsafe_b64decode(cursor.encode()))
            img, alt, fid, row_id = payload["k"]
            fp = payload["f"]
        except Exception as exc:
            raise QueryError(f"malformed cursor: {exc}") from exc
        if fp != crit.fingerprint():
            raise QueryError("cursor does not match these search criteria")
        return (img, alt, fid, row_id)

    # -- image registration and nearest place -----------------------------------

    def register_image(self, theme: Theme, grid, acquired: dt.date) -> int:
        """Stamp image availability onto every place in the given cell."""
        with self._lock:
            if theme is Theme.USGS:
                row_ids = self._by_ugrid.get((grid.zone, grid.interleaved), [])
            else:
                row_ids = self._by_zgrid.get(grid.value, [])
            for rid in row_ids:
                row = self.rows[rid]
                if theme is Theme.USGS:
                    row.usgs_date = max(filter(None, (row.usgs_date, acquired)))
                else:
                    row.spin2_date = max(filter(None, (row.spin2_date, acquired)))
                row.image_flag = True
            if row_ids:
                self._mark_dirty()
            return len(row_ids)

    def _cell_center(self, theme: Theme, grid) -> GeoPoint:
        if theme is Theme.USGS:
            ext = ugrid_to_extent(grid)
            e, n = ext.center
            return utm_to_geo(UtmCoord(zone=grid.zone, easting=e, northing=n))
        ext = zgrid_to_extent(grid)
        lon, lat = ext.center
        return GeoPoint(lat, lon)

    def nearest_place(self, theme: Theme, grid) -> str | None:
        """Closest place name within 50 km of the cell center, or None.

        Candidate places come from a bounded scan of the z-grid place index
        around the center (a 50 km rectangle in index space), then the exact
        great-circle distance decides; name, then row order, break ties.
        """
        with self._lock:
            center = self._cell_center(theme, grid)
            lon_i, lat_i = zgrid_indices(center)
            cell_h_m = METERS_PER_DEG_LAT / ZGRID_LAT_PER_DEG
            r_lat = math.ceil(NEAREST_RADIUS_M / cell_h_m) + 1
            cos_lat = max(math.cos(math.radians(center.lat)), 1e-6)
            cell_w_m = METERS_PER_DEG_LAT * cos_lat / ZGRID_LON_PER_DEG
            r_lon = min(math.ceil(NEAREST_RADIUS_M / cell_w_m) + 1, ZGRID_LON_CELLS // 2)

            best: tuple | None = None
            for dv in range(-r_lat, r_lat + 1):
                v = lat_i + dv
                if not 0 <= v < ZGRID_LAT_CELLS:
                    continue
                for du in range(-r_lon, r_lon + 1):
                    u = (lon_i + du) % ZGRID_LON_CELLS
                    for rid in self._by_zgrid.get(interleave(u, v), ()):
                        row = self.rows[rid]
                        d = _haversine_m(center.lat, center.lon, row.lat, row.lon)
                        if d <= NEAREST_RADIUS_M:
                            cand = (d, row.alt_folded, row.row_id)
                            if best is None or cand < best:
                                best = cand
            return self.rows[best[2]].alternate_name if best else None

    def lookup_place_id(self, place_id: int) -> list[PlaceRow]:
        with self._lock:
            return [self.rows[rid] for rid in self._by_place_id.get(place_id, [])]


def _haversine_m(lat1, lon1, lat2, lon2) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(a))
