"""Command-line entry points.

Subcommands mirror the subsystem surfaces: ``gridid`` debug encode/decode,
``cut`` (slice one source to debug JPEG files), ``store`` maintenance,
``gazetteer`` load/search, ``load`` workflow, ``serve``.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from pathlib import Path

from .gazetteer import Gazetteer
from .grid import (
    GeoPoint,
    UGridId,
    UtmCoord,
    ZGridId,
    format_gridid,
    geo_to_zgrid,
    parse_gridid,
    utm_to_ugrid,
)
from .raster import Theme
from .store import TileStore
from .utm import geo_to_utm


def _cmd_gridid(args) -> int:
    if args.action == "encode":
        if args.theme == "spin2":
            g = geo_to_zgrid(GeoPoint(args.lat, args.lon))
            code = g.value
        else:
            g = utm_to_ugrid(geo_to_utm(GeoPoint(args.lat, args.lon)))
            code = g.interleaved
        print(format_gridid(g))
        print(f"decimal: {code:010d}")
        print(f"binary:  {code:030b}")
    else:
        g = parse_gridid(args.gridid)
        if isinstance(g, ZGridId):
            print(f"zgrid lon_index={g.lon_index} lat_index={g.lat_index}")
            print(f"decimal: {g.value:010d}")
            print(f"binary:  {g.value:030b}")
        else:
            print(f"ugrid zone={g.zone} easting_index={g.easting_index} "
                  f"northing_index={g.northing_index}")
            print(f"decimal: {g.interleaved:010d}")
            print(f"binary:  {g.interleaved:030b}")
    return 0


def _cmd_cut(args) -> int:
    from .pyramid import cut_spin2, cut_usgs, dump_debug, load_source

    src = load_source(args.raster, args.sidecar)
    if src.theme is Theme.USGS:
        cuts = cut_usgs([src], src.raster.anchor.zone)
    else:
        cuts = cut_spin2([src])
    total = 0
    for cut in cuts:
        paths = dump_debug(cut, args.out)
        total += len(paths)
    print(f"{len(cuts)} cuts, {total} images -> {args.out}")
    return 0


def _cmd_store(args) -> int:
    store = TileStore(args.root)
    if args.action == "compact":
        n = store.compact()
        print(f"compacted {n} records")
    elif args.action == "stats":
        s = store.stats()
        print(json.dumps(s.__dict__, indent=2))
    elif args.action == "snapshot":
        if args.since is not None:
            n = store.snapshot_incremental(args.out, since_epoch=args.since)
        else:
            n = store.snapshot_full(args.out)
        print(f"wrote {n} records to {args.out}")
    elif args.action == "restore":
        n = store.restore(args.files)
        print(f"applied {n} records")
    return 0


def _cmd_gazetteer(args) -> int:
    gaz = Gazetteer()
    if args.action == "load":
        counts = gaz.load_file(args.file)
        print(json.dumps(counts, indent=2))
        return 0
    counts = gaz.load_file(args.file)
    page = gaz.search(name=args.name, state=args.state, country=args.country,
                      feature_type=args.type, cursor=args.cursor or None)
    for row in page.rows:
        flag = "*" if row.image_flag else " "
        print(f"{flag} {row.alternate_name} ({row.lat:.4f}, {row.lon:.4f})")
    if page.next_cursor:
        print(f"next cursor: {page.next_cursor}")
    return 0


def _cmd_load(args) -> int:
    from .loader import Workflow, plan, progress_from_dir

    if args.action == "plan":
        doc = plan(args.manifest, args.run_dir)
        print(f"{len(doc['bands'])} bands, {len(doc['excluded'])} sources excluded")
        return 0
    if args.action == "status":
        print(json.dumps(progress_from_dir(args.run_dir), indent=2))
        return 0
    store = TileStore(args.store)
    gaz = None
    if args.gazetteer:
        gaz = Gazetteer()
        gaz.load_file(args.gazetteer)
    wf = Workflow(args.run_dir, store, gaz)
    stats = wf.run(cutters=args.cutters, loaders=args.loaders)
    print(f"cleaned={stats.jobs_cleaned} failed={stats.jobs_failed} "
          f"cut={stats.cut_mbps:.2f} MB/s load={stats.load_mbps:.2f} MB/s")
    return 0 if stats.jobs_failed == 0 else 1


def _cmd_serve(args) -> int:
    import logging

    from .server import ServerConfig, serve

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    config = ServerConfig.load(args.config)
    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terratile", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gridid", help="encode/decode grid ids")
    gs = g.add_subparsers(dest="action", required=True)
    enc = gs.add_parser("encode")
    enc.add_argument("--theme", choices=["usgs", "spin2"], default="spin2")
    enc.add_argument("lat", type=float)
    enc.add_argument("lon", type=float)
    dec = gs.add_parser("decode")
    dec.add_argument("gridid")
    g.set_defaults(fn=_cmd_gridid)

    c = sub.add_parser("cut", help="cut one source and dump debug JPEGs")
    c.add_argument("raster")
    c.add_argument("sidecar")
    c.add_argument("--out", default="cut_debug")
    c.set_defaults(fn=_cmd_cut)

    s = sub.add_parser("store", help="store maintenance")
    s.add_argument("--root", default="store")
    ss = s.add_subparsers(dest="action", required=True)
    ss.add_parser("compact")
    ss.add_parser("stats")
    snap = ss.add_parser("snapshot")
    snap.add_argument("--out", required=True)
    group = snap.add_mutually_exclusive_group()
    group.add_argument("--full", action="store_true")
    group.add_argument("--since", type=int, default=None)
    rest = ss.add_parser("restore")
    rest.add_argument("files", nargs="+")
    s.set_defaults(fn=_cmd_store)

    z = sub.add_parser("gazetteer", help="load and search the place directory")
    zs = z.add_subparsers(dest="action", required=True)
    zl = zs.add_parser("load")
    zl.add_argument("file")
    zq = zs.add_parser("search")
    zq.add_argument("file")
    zq.add_argument("--name")
    zq.add_argument("--state")
    zq.add_argument("--country")
    zq.add_argument("--type")
    zq.add_argument("--cursor", default="")
    z.set_defaults(fn=_cmd_gazetteer)

    l = sub.add_parser("load", help="ingest workflow")
    ls = l.add_subparsers(dest="action", required=True)
    lp = ls.add_parser("plan")
    lp.add_argument("manifest")
    lp.add_argument("--run-dir", default="load_run")
    lr = ls.add_parser("run")
    lr.add_argument("--run-dir", default="load_run")
    lr.add_argument("--store", default="store")
    lr.add_argument("--gazetteer", default=None)
    lr.add_argument("--cutters", type=int, default=1)
    lr.add_argument("--loaders", type=int, default=1)
    lst = ls.add_parser("status")
    lst.add_argument("--run-dir", default="load_run")
    l.set_defaults(fn=_cmd_load)

    v = sub.add_parser("serve", help="run the HTTP atlas server")
    v.add_argument("--config", default=None)
    v.set_defaults(fn=_cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
