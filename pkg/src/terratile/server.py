"""HTTP atlas service: tiles, mosaic page descriptors, search, coverage.

The server never renders imagery into pages itself; a page request returns
a JSON descriptor, a grid of tile URLs the viewer mosaics client-side,
plus navigation targets.  View sizes honor the four published anchors (a
full-resolution page shows 4 tiles small and 16 large; a 32 m page shows
64 small and 256 large) and every grid dimension is even, so the half-page
pan step shares exactly 50% of tile URLs with the previous page.

Protected full-resolution tiles are stored encrypted and decrypted at the
edge before being sent; coarse levels are stored and served open.
"""

from __future__ import annotations

import datetime as dt
import hmac
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import coverage as coverage_mod
from .gazetteer import FEATURE_TYPES, Gazetteer, QueryError
from .grid import (
    GeoPoint,
    GridRangeError,
    UGridId,
    UtmCoord,
    ZGridId,
    ZGRID_LAT_CELLS,
    ZGRID_LON_CELLS,
    UGRID_E_CELLS,
    UGRID_N_CELLS,
    format_gridid,
    interleave,
    parse_gridid,
)
from .loader import progress_from_dir
from .pyramid import PyramidLevel, SPIN2_TILE_GRID, USGS_TILE_GRID, tile_nonce
from .raster import Theme
from .store import StoreError, TileStore
from . import tilecrypt
from .utm import MAX_LAT, ProjectionError, geo_to_utm, utm_to_geo

access_log = logging.getLogger("terratile.access")

LEVEL_ORDER = [PyramidLevel.TILE, PyramidLevel.BROWSE, PyramidLevel.THUMB, PyramidLevel.JUMP]

# (cols, rows) per view size; every dimension even so a half-page pan
# reuses exactly half the tiles.  Small/large pin the published anchor
# counts at full resolution (4 / 16) and 32 m (64 / 256); medium is the
# geometric-mean tile count laid out as a wide rectangle.
VIEW_GRID: dict[PyramidLevel, dict[str, tuple[int, int]]] = {
    PyramidLevel.TILE: {"small": (2, 2), "medium": (4, 2), "large": (4, 4)},
    PyramidLevel.BROWSE: {"small": (4, 4), "medium": (8, 4), "large": (8, 8)},
    PyramidLevel.THUMB: {"small": (6, 6), "medium": (12, 6), "large": (12, 12)},
    PyramidLevel.JUMP: {"small": (8, 8), "medium": (16, 8), "large": (16, 16)},
}

CACHE_HEADER = "public, max-age=31536000, immutable"


@dataclass
class ServerConfig:
    """File- and environment-configurable server settings.

    Environment variables override file values with the prefix
    ``TERRATILE_``: LISTEN, STORE_ROOT, GAZETTEER, ADMIN_TOKEN, RUN_DIR,
    UI_DIR.
    """

    listen: str = "127.0.0.1:8080"
    store_root: str = "store"
    gazetteer_path: str | None = None
    admin_token: str | None = None
    run_dir: str | None = None
    ui_dir: str | None = None

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None) -> "ServerConfig":
        values: dict = {}
        if path is not None:
            values.update(json.loads(Path(path).read_text()))
        env = os.environ if env is None else env
        for key, attr in [
            ("TERRATILE_LISTEN", "listen"),
            ("TERRATILE_STORE_ROOT", "store_root"),
            ("TERRATILE_GAZETTEER", "gazetteer_path"),
            ("TERRATILE_ADMIN_TOKEN", "admin_token"),
            ("TERRATILE_RUN_DIR", "run_dir"),
            ("TERRATILE_UI_DIR", "ui_dir"),
        ]:
            if key in env:
                values[attr] = env[key]
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in values.items() if k in known})

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------
# view geometry: a unit is one tile slot at the given level
# ---------------------------------------------------------------------------

def units_per_cell(theme: Theme, level: PyramidLevel) -> int:
    if level is PyramidLevel.TILE:
        return USGS_TILE_GRID if theme is Theme.USGS else SPIN2_TILE_GRID
    return 1


@dataclass(frozen=True)
class UnitSpace:
    """Integer addressing of tile slots: x east, y north, y=0 at the south."""

    theme: Theme
    level: PyramidLevel
    sub: int
    zone: int | None   # fixed zone for the UTM theme

    def of_point(self, p: GeoPoint) -> tuple[int, int]:
        if self.theme is Theme.SPIN2:
            gx = int(math.floor((p.lon + 180.0) * 48 * self.sub + 1e-7))
            gy = int(math.floor((p.lat + 90.0) * 96 * self.sub + 1e-7))
            return gx, min(gy, 17280 * self.sub - 1)
        c = geo_to_utm(p, zone=self.zone)
        gx = int(math.floor((c.easting + 400.0) / (1800.0 / self.sub) + 1e-7))
        gy = int(math.floor(c.northing / (1200.0 / self.sub) + 1e-7))
        return gx, gy

    def in_bounds(self, gx: int, gy: int) -> bool:
        if self.theme is Theme.SPIN2:
            return 0 <= gy < ZGRID_LAT_CELLS * self.sub
        return 0 <= gx < UGRID_E_CELLS * self.sub and 0 <= gy < UGRID_N_CELLS * self.sub

    def decode(self, gx: int, gy: int):
        """(grid id, sub_row, sub_col) of a unit; row 0 is a cell's north edge."""
        if self.theme is Theme.SPIN2:
            gx %= ZGRID_LON_CELLS * self.sub
            cell_x, sub_col = divmod(gx, self.sub)
            cell_y, off_y = divmod(gy, self.sub)
            grid = ZGridId(interleave(cell_x, cell_y))
        else:
            cell_x, sub_col = divmod(gx, self.sub)
            cell_y, off_y = divmod(gy, self.sub)
            grid = UGridId(self.zone, interleave(cell_x, cell_y))
        return grid, self.sub - 1 - off_y, sub_col

    def center_of(self, gx: int, gy: int) -> GeoPoint:
        if self.theme is Theme.SPIN2:
            gx %= ZGRID_LON_CELLS * self.sub
            lon = (gx + 0.5) / (48 * self.sub) - 180.0
            lat = (gy + 0.5) / (96 * self.sub) - 90.0
            return GeoPoint(lat, lon)
        e = (gx + 0.5) * (1800.0 / self.sub) - 400.0
        n = (gy + 0.5) * (1200.0 / self.sub)
        return utm_to_geo(UtmCoord(self.zone, e, n))


class PageError(ValueError):
    pass


def page_descriptor(store: TileStore, gazetteer: Gazetteer | None, theme: Theme,
                    lat: float, lon: float, level: PyramidLevel, size: str) -> dict:
    """Build the mosaic descriptor centered on the cell containing a point."""
    if size not in ("small", "medium", "large"):
        raise PageError(f"unknown view size {size!r}")
    point = GeoPoint(lat, lon)
    zone = None
    if theme is Theme.USGS:
        if abs(lat) > MAX_LAT:
            raise PageError("latitude outside the UTM theme's band")
        zone = geo_to_utm(point).zone
    space = UnitSpace(theme, level, units_per_cell(theme, level), zone)
    cols, rows = VIEW_GRID[level][size]
    gcx, gcy = space.of_point(point)
    x0, y0 = gcx - cols // 2, gcy - rows // 2

    date_cache: dict = {}

    def latest(grid):
        key = format_gridid(grid)
        if key not in date_cache:
            date_cache[key] = store.latest_visible_acquired(theme, grid)
        return date_cache[key]

    grid_rows = []
    for vr in range(rows):
        gy = y0 + (rows - 1 - vr)          # viewer row 0 is the north edge
        row_slots = []
        for vc in range(cols):
            gx = x0 + vc
            if not space.in_bounds(gx, gy):
                row_slots.append(None)
                continue
            grid, sub_row, sub_col = space.decode(gx, gy)
            gid = format_gridid(grid)
            acquired = latest(grid)
            url = None
            if acquired is not None and store.get_tile(
                theme, grid, level, sub_row, sub_col
            ) is not None:
                url = (f"/tile/{theme.value}/{level.value}/{gid}/{sub_row}/{sub_col}"
                       f"?date={acquired.isoformat()}")
            row_slots.append({
                "gridid": gid, "row": sub_row, "col": sub_col, "url": url,
            })
        grid_rows.append(row_slots)

    center_grid, _, _ = space.decode(gcx, gcy)
    place = gazetteer.nearest_place(theme, center_grid) if gazetteer else None
    store.record_hit("grid", format_gridid(center_grid),
                     ts=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"))

    def pan_target(dx_units: int, dy_units: int):
        tx, ty = gcx + dx_units, gcy + dy_units
        if not space.in_bounds(tx, ty):
            return None
        p = space.center_of(tx, ty)
        return {"lat": p.lat, "lon": p.lon}

    li = LEVEL_ORDER.index(level)
    other = Theme.SPIN2 if theme is Theme.USGS else Theme.USGS
    descriptor = {
        "theme": theme.value,
        "level": level.value,
        "size": size,
        "rows": rows,
        "cols": cols,
        "center": {
            "lat": lat, "lon": lon,
            "gridid": format_gridid(center_grid),
            "place_name": place,
        },
        "tiles": grid_rows,
        "nav": {
            "pan": {
                "west": pan_target(-cols // 2, 0),
                "east": pan_target(cols // 2, 0),
                "north": pan_target(0, rows // 2),
                "south": pan_target(0, -rows // 2),
            },
            "zoom_in": LEVEL_ORDER[li - 1].value if li > 0 else None,
            "zoom_out": LEVEL_ORDER[li + 1].value if li < 3 else None,
            "theme_switch": {"theme": other.value, "lat": lat, "lon": lon},
        },
        "download_url": None,  # purchase flow intentionally not implemented
    }
    return descriptor


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

@dataclass
class AppState:
    store: TileStore
    gazetteer: Gazetteer | None
    config: ServerConfig = field(default_factory=ServerConfig)


def _bad_request(msg: str) -> JSONResponse:
    return JSONResponse({"error": msg}, status_code=400)


def create_app(config: ServerConfig | None = None, store: TileStore | None = None,
               gazetteer: Gazetteer | None = None) -> FastAPI:
    config = config or ServerConfig()
    if store is None:
        store = TileStore(config.store_root)
    if gazetteer is None and config.gazetteer_path:
        gazetteer = Gazetteer()
        gazetteer.load_file(config.gazetteer_path)

    app = FastAPI(title="terratile", docs_url=None, redoc_url=None)
    state = AppState(store=store, gazetteer=gazetteer, config=config)
    app.state.atlas = state

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        t0 = time.time()
        response = await call_next(request)
        ms = (time.time() - t0) * 1000.0
        size = response.headers.get("content-length", "-")
        access_log.info(
            "%s %s %s %s %s %.1f",
            dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
            request.method, request.url.path, response.status_code, size, ms,
        )
        return response

    def check_admin(request: Request) -> bool:
        token = state.config.admin_token
        if not token:
            return False
        got = request.headers.get("authorization", "")
        return got.startswith("Bearer ") and hmac.compare_digest(got[7:], token)

    # -- tiles -------------------------------------------------------------

    @app.get("/tile/{theme}/{level}/{gridid}/{row}/{col}")
    def get_tile(theme: str, level: str, gridid: str, row: int, col: int,
                 date: str | None = None):
        try:
            theme_e = Theme(theme)
            level_e = PyramidLevel(level)
            grid = parse_gridid(gridid)
            acquired = dt.date.fromisoformat(date) if date else None
        except (ValueError, GridRangeError) as exc:
            return _bad_request(str(exc))
        rec = state.store.get_tile(theme_e, grid, level_e, row, col, acquired)
        if rec is None:
            return JSONResponse({"error": "not found"}, status_code=404)
        blob = rec.blob
        if rec.encrypted:
            meta = state.store.get_image_meta(theme_e, grid, rec.acquired)
            if meta is None or not meta.key_hex:
                return JSONResponse({"error": "key unavailable"}, status_code=404)
            nonce = tile_nonce(format_gridid(grid), level_e, rec.sub_row, rec.sub_col,
                               rec.acquired.isoformat())
            blob = tilecrypt.light_decrypt(blob, bytes.fromhex(meta.key_hex), nonce)
        etag = f'"{gridid}-{level}-{row}-{col}-{rec.acquired.isoformat()}"'
        return Response(content=blob, media_type="image/jpeg", headers={
            "Cache-Control": CACHE_HEADER,
            "ETag": etag,
        })

    # -- page descriptors -----------------------------------------------------

    @app.get("/page")
    def get_page(theme: str, lat: float, lon: float, level: str = "thumb",
                 size: str = "small"):
        try:
            descriptor = page_descriptor(
                state.store, state.gazetteer, Theme(theme), lat, lon,
                PyramidLevel(level), size,
            )
        except (ValueError, GridRangeError, ProjectionError, PageError) as exc:
            return _bad_request(str(exc))
        return JSONResponse(descriptor)

    # -- gazetteer ---------------------------------------------------------------

    @app.get("/gazetteer")
    def gazetteer_search(place: str | None = None, state_q: str | None = Query(None, alias="state"),
                         country: str | None = None, type_q: str | None = Query(None, alias="type"),
                         cursor: str | None = None):
        if state.gazetteer is None:
            return _bad_request("no gazetteer loaded")
        if not any((place, state_q, country, type_q)):
            return _bad_request("at least one of place, state, country, type required")
        try:
            page = state.gazetteer.search(name=place, state=state_q, country=country,
                                          feature_type=type_q, cursor=cursor)
        except QueryError as exc:
            return _bad_request(str(exc))
        key = json.dumps({"place": place, "state": state_q, "country": country,
                          "type": type_q}, sort_keys=True)
        state.store.record_hit("gazetteer", key,
                               ts=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"))
        results = []
        for row in page.rows:
            links = {}
            if row.usgs_date is not None:
                links["usgs"] = f"/page?theme=usgs&lat={row.lat}&lon={row.lon}&level=thumb&size=small"
            if row.spin2_date is not None:
                links["spin2"] = f"/page?theme=spin2&lat={row.lat}&lon={row.lon}&level=thumb&size=small"
            results.append({
                "place_id": row.place_id,
                "name": row.name,
                "alternate_name": row.alternate_name,
                "feature_type": FEATURE_TYPES[row.feature_id],
                "image_flag": row.image_flag,
                "usgs_date": row.usgs_date.isoformat() if row.usgs_date else None,
                "spin2_date": row.spin2_date.isoformat() if row.spin2_date else None,
                "lat": row.lat, "lon": row.lon,
                "links": links,
            })
        return JSONResponse({"results": results, "next_cursor": page.next_cursor})

    # -- coverage -------------------------------------------------------------------

    @app.get("/coverage/{level}/{x}/{y}")
    def get_coverage(level: str, x: str, y: str):
        if not (x.lstrip("-").isdigit() and y.lstrip("-").isdigit()):
            return _bad_request("x and y must be integers")
        if level.isdigit():
            idx = int(level)
            if idx >= len(coverage_mod.LEVEL_ORDER):
                return JSONResponse({"error": "no such level"}, status_code=404)
            level = coverage_mod.LEVEL_ORDER[idx]
        elif level not in coverage_mod.LEVELS:
            return _bad_request(f"unknown coverage level {level!r}")
        try:
            png = coverage_mod.render_coverage(state.store, level, int(x), int(y))
        except coverage_mod.CoverageError as exc:
            return JSONResponse({"error": str(exc)}, status_code=404)
        return Response(content=png, media_type="image/png")

    @app.get("/coverage_nav")
    def coverage_nav(level: str, x: int, y: int, px: int, py: int):
        if level.isdigit():
            idx = int(level)
            if idx >= len(coverage_mod.LEVEL_ORDER):
                return JSONResponse({"error": "no such level"}, status_code=404)
            level = coverage_mod.LEVEL_ORDER[idx]
        try:
            lat, lon = coverage_mod.pixel_to_geo(level, x, y, px, py)
        except coverage_mod.CoverageError as exc:
            return _bad_request(str(exc))
        return JSONResponse({"lat": lat, "lon": lon})

    # -- picks ------------------------------------------------------------------------

    @app.get("/picks")
    def get_picks():
        return JSONResponse({
            "picks": [
                {"title": p.title, "theme": p.theme.value,
                 "gridid": format_gridid(p.grid), "caption": p.caption}
                for p in state.store.picks()
            ]
        })

    @app.post("/picks")
    async def post_pick(request: Request):
        if not check_admin(request):
            return JSONResponse({"error": "admin token required"}, status_code=403)
        body = await request.json()
        try:
            rec = state.store.add_pick(
                title=body["title"], theme=Theme(body["theme"]),
                grid=parse_gridid(body["gridid"]), caption=body.get("caption", ""),
            )
        except (KeyError, ValueError, GridRangeError, StoreError) as exc:
            return _bad_request(str(exc))
        return JSONResponse({"created": rec.title}, status_code=201)

    # -- admin ------------------------------------------------------------------------

    @app.get("/admin/progress")
    def admin_progress():
        if not state.config.run_dir or not Path(state.config.run_dir, "plan.json").exists():
            return JSONResponse({"states": {}, "bands": {}, "total_jobs": 0})
        return JSONResponse(progress_from_dir(state.config.run_dir))

    @app.post("/admin/hide")
    async def admin_hide(request: Request):
        if not check_admin(request):
            return JSONResponse({"error": "admin token required"}, status_code=403)
        body = await request.json()
        try:
            theme = Theme(body["theme"])
            grids = [parse_gridid(g) for g in body["gridids"]]
            visible = bool(body["visible"])
        except (KeyError, ValueError, GridRangeError) as exc:
            return _bad_request(str(exc))
        count = state.store.hide_region(theme, grids, visible)
        return JSONResponse({"updated": count})

    ui_dir = config.ui_dir
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(config: ServerConfig) -> None:
    """Run the server under uvicorn (blocking)."""
    import uvicorn

    host, port = config.host_port
    uvicorn.run(create_app(config), host=host, port=port, log_level="info")
