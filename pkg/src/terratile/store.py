"""Log-structured tile and metadata store.

Layout under the store root::

    wal.log          append-only batch log (crc-framed, fsync'd per batch)
    segments/*.seg   Morton-sorted record streams written by compact()

All records live in memory as dicts keyed by their primary keys; the WAL
and segments exist for durability and for the physical-clustering
property: after compaction, scanning the segment files visits tiles in
ascending (theme, level, Morton key) order, so neighboring cells sit next
to each other on disk.

Write model: one writer at a time (an internal lock enforces it), any
number of readers.  A batch either reaches the WAL completely or not at
all; replaying a WAL with a torn tail silently drops the unfinished batch.
Re-inserting records identical to what the store already holds is a no-op
that consumes no epoch, which is what makes loader crash-recovery replay
safe.
"""

from __future__ import annotations

import datetime as dt
import os
import struct
import threading
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

from .grid import GridId
from .pyramid import PyramidLevel
from .raster import Theme
from .records import (
    HitRecord,
    ImageMetaRecord,
    OriginalMetadataRecord,
    PickRecord,
    RecordCodecError,
    StoreRecord,
    TileRecord,
    decode_record,
    encode_record,
    grid_sort_key,
)

_BATCH_HEAD = struct.Struct(">III")     # payload length, crc32, record count
SNAPSHOT_MAGIC = b"TTSNAP1\n"
_TRAILER_HEAD = struct.Struct(">IIQQQ")  # crc32, flags, count, min_epoch, max_epoch
DEFAULT_SEGMENT_BYTES = 64 * 1024 * 1024


class StoreError(ValueError):
    """Batch rejected or store files unusable."""


class SnapshotError(StoreError):
    """Snapshot failed validation; the store was left untouched."""


@dataclass
class StoreStats:
    tiles: int
    image_meta: int
    original_meta: int
    picks: int
    hits: int
    epoch: int
    segments: int
    wal_bytes: int


def _batch_bytes(records: list[StoreRecord]) -> bytes:
    body = b"".join(encode_record(r) for r in records)
    return _BATCH_HEAD.pack(len(body), zlib.crc32(body), len(records)) + body


def _scan_batches(data: bytes) -> tuple[list[list[StoreRecord]], int]:
    """All complete batches plus the byte offset where valid data ends."""
    batches = []
    off = 0
    n = len(data)
    while off + _BATCH_HEAD.size <= n:
        length, crc, _count = _BATCH_HEAD.unpack_from(data, off)
        start = off + _BATCH_HEAD.size
        end = start + length
        if end > n:
            break  # torn tail: batch never fully reached disk
        body = data[start:end]
        if zlib.crc32(body) != crc:
            break
        batches.append(list(_read_record_stream(body)))
        off = end
    return batches, off


def _read_record_stream(data: bytes) -> Iterator[StoreRecord]:
    off = 0
    n = len(data)
    frame = struct.Struct(">II")
    while off < n:
        length, crc = frame.unpack_from(data, off)
        start = off + frame.size
        payload = data[start:start + length]
        if len(payload) != length or zlib.crc32(payload) != crc:
            raise RecordCodecError(f"bad record frame at {off}")
        yield decode_record(payload)
        off = start + length


class TileStore:
    """Grid-clustered storage for tiles, metadata, picks, and hit counters."""

    def __init__(self, root: str | Path, segment_bytes: int = DEFAULT_SEGMENT_BYTES,
                 fsync: bool = True):
        self.root = Path(root)
        self.segment_bytes = segment_bytes
        self.fsync = fsync
        self._lock = threading.RLock()

        self._tiles: dict[tuple, TileRecord] = {}
        self._image_meta: dict[tuple, ImageMetaRecord] = {}
        self._orig_meta: dict[tuple, OriginalMetadataRecord] = {}
        self._picks: dict[tuple, PickRecord] = {}
        self._hits: dict[tuple, HitRecord] = {}
        self._epoch = 0

        self.root.mkdir(parents=True, exist_ok=True)
        self.segments_dir = self.root / "segments"
        self.segments_dir.mkdir(exist_ok=True)
        self.wal_path = self.root / "wal.log"
        self._load()

    # -- durability ---------------------------------------------------------

    def _load(self) -> None:
        for seg in self._live_segments():
            for rec in _read_record_stream(seg.read_bytes()):
                self._apply(rec)
        if self.wal_path.exists():
            data = self.wal_path.read_bytes()
            batches, valid_end = _scan_batches(data)
            for batch in batches:
                for rec in batch:
                    self._apply(rec)
            if valid_end < len(data):
                # drop the torn tail so later appends stay reachable
                with open(self.wal_path, "r+b") as fh:
                    fh.truncate(valid_end)

    def _live_segments(self) -> list[Path]:
        """Segments of the newest completed compaction generation.

        A generation is complete once its ``.done`` marker exists; anything
        newer without a marker is a crashed compaction and is ignored (the
        WAL still holds its data).
        """
        gens = sorted(
            {int(p.name.split("-")[0]) for p in self.segments_dir.glob("*.seg")},
            reverse=True,
        )
        for gen in gens:
            if (self.segments_dir / f"{gen:06d}.done").exists():
                return sorted(self.segments_dir.glob(f"{gen:06d}-*.seg"))
        return []

    def _append_wal(self, records: list[StoreRecord]) -> None:
        data = _batch_bytes(records)
        with open(self.wal_path, "ab") as fh:
            fh.write(data)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())

    def compact(self) -> int:
        """Rewrite all records into Morton-sorted segments; truncate the WAL.

        Crash-safe ordering: new-generation segments land first, then the
        generation marker, then old segments and the WAL are dropped.  A
        crash at any point leaves either the old generation plus WAL or the
        new generation (re-applying the stale WAL on top is harmless; replay
        is epoch-guarded).
        """
        with self._lock:
            records = list(self._sorted_records())
            old_gens = {int(p.name.split("-")[0]) for p in self.segments_dir.glob("*.seg")}
            gen = max(old_gens, default=-1) + 1

            seg_no = 0
            buf = bytearray()

            def flush():
                nonlocal seg_no, buf
                path = self.segments_dir / f"{gen:06d}-{seg_no:06d}.seg"
                path.write_bytes(bytes(buf))
                seg_no += 1
                buf = bytearray()

            for rec in records:
                buf += encode_record(rec)
                if len(buf) >= self.segment_bytes:
                    flush()
            if buf:
                flush()
            (self.segments_dir / f"{gen:06d}.done").write_text("")

            for old_gen in old_gens:
                for p in self.segments_dir.glob(f"{old_gen:06d}-*.seg"):
                    p.unlink()
                marker = self.segments_dir / f"{old_gen:06d}.done"
                if marker.exists():
                    marker.unlink()
            self.wal_path.write_bytes(b"")
        return len(records)

    def _sorted_records(self) -> Iterator[StoreRecord]:
        yield from sorted(self._tiles.values(), key=lambda r: r.sort_key)
        yield from sorted(self._image_meta.values(), key=lambda r: r.sort_key)
        yield from sorted(self._orig_meta.values(), key=lambda r: r.sort_key)
        yield from sorted(self._picks.values(), key=lambda r: r.sort_key)
        yield from sorted(self._hits.values(), key=lambda r: r.sort_key)

    # -- record application (shared by load, put, and restore) ---------------

    @staticmethod
    def _install(table: dict, rec: StoreRecord) -> None:
        # replay can present records out of order (stale WAL over a fresh
        # compaction); the higher epoch always wins a primary-key slot
        cur = table.get(rec.full_key)
        if cur is None or rec.insert_epoch >= cur.insert_epoch:
            table[rec.full_key] = rec

    def _apply(self, rec: StoreRecord) -> None:
        """Install a record, honoring per-kind replacement slots."""
        if isinstance(rec, TileRecord):
            if rec.theme is Theme.USGS:
                stale = [k for k in self._tiles
                         if k[:5] == rec.slot and k != rec.full_key]
                for k in stale:
                    if self._tiles[k].acquired <= rec.acquired:
                        del self._tiles[k]
                    else:
                        return  # an even newer acquisition already holds the slot
            self._install(self._tiles, rec)
        elif isinstance(rec, ImageMetaRecord):
            if rec.theme is Theme.USGS:
                prefix = (rec.theme.value, grid_sort_key(rec.grid))
                stale = [k for k in self._image_meta
                         if k[:2] == prefix and k != rec.full_key]
                for k in stale:
                    if self._image_meta[k].acquired <= rec.acquired:
                        del self._image_meta[k]
                    else:
                        return
            self._install(self._image_meta, rec)
        elif isinstance(rec, OriginalMetadataRecord):
            self._install(self._orig_meta, rec)
        elif isinstance(rec, PickRecord):
            self._install(self._picks, rec)
        elif isinstance(rec, HitRecord):
            self._install(self._hits, rec)
        else:
            raise StoreError(f"unknown record {type(rec)!r}")
        self._epoch = max(self._epoch, rec.insert_epoch)

    # -- bulk load ------------------------------------------------------------

    def _validate_batch(self, tiles, image_meta, original_meta) -> None:
        seen = set()
        for t in tiles:
            if t.level is PyramidLevel.TILE:
                grid_n = 8 if t.theme is Theme.USGS else 5
            else:
                grid_n = 1
            if not (0 <= t.sub_row < grid_n and 0 <= t.sub_col < grid_n):
                raise StoreError(f"tile position ({t.sub_row},{t.sub_col}) outside {grid_n}x{grid_n}")
            if t.encrypted and not t.key_id:
                raise StoreError("encrypted tile lacks key_id")
            if t.full_key in seen:
                raise StoreError(f"duplicate tile key in batch: {t.full_key}")
            seen.add(t.full_key)
        for m in image_meta:
            if m.key_hex is not None and m.key_id is None:
                raise StoreError("image meta carries a key without key_id")

    def put_tiles(
        self,
        tiles: Iterable[TileRecord],
        image_meta: Iterable[ImageMetaRecord] = (),
        original_meta: Iterable[OriginalMetadataRecord] = (),
    ) -> int:
        """Insert one atomic batch; returns the number of tiles that changed.

        Identical re-insertion is a no-op (idempotent replay).  USGS tiles
        replace any older acquisition in their cell slot; SPIN2 keeps every
        acquisition.  The whole batch is rejected on any invariant
        violation.
        """
        tiles = list(tiles)
        image_meta = list(image_meta)
        original_meta = list(original_meta)
        self._validate_batch(tiles, image_meta, original_meta)

        with self._lock:
            effective: list[StoreRecord] = []
            tile_count = 0
            for t in tiles:
                cur = self._tiles.get(t.full_key)
                if cur is not None and (cur.blob, cur.encrypted, cur.key_id) == (
                    t.blob, t.encrypted, t.key_id
                ):
                    continue
                if t.theme is Theme.USGS:
                    newer = [
                        r for k, r in self._tiles.items()
                        if k[:5] == t.slot and r.acquired > t.acquired
                    ]
                    if newer:
                        continue  # the slot already moved past this acquisition
                effective.append(t)
                tile_count += 1
            for m in image_meta:
                cur = self._image_meta.get(m.full_key)
                if cur is not None and replace(cur, insert_epoch=0) == replace(m, insert_epoch=0):
                    continue
                if m.theme is Theme.USGS:
                    prefix = (m.theme.value, grid_sort_key(m.grid))
                    if any(k[:2] == prefix and r.acquired > m.acquired
                           for k, r in self._image_meta.items()):
                        continue
                effective.append(m)
            for o in original_meta:
                cur = self._orig_meta.get(o.full_key)
                if cur is not None and replace(cur, insert_epoch=0) == replace(o, insert_epoch=0):
                    continue
                effective.append(o)

            if not effective:
                return 0
            epoch = self._epoch + 1
            stamped = [replace(r, insert_epoch=epoch) for r in effective]
            self._append_wal(stamped)
            for rec in stamped:
                self._apply(rec)
            return tile_count

    # -- reads ----------------------------------------------------------------

    def _visible(self, theme: Theme, grid: GridId, acquired: dt.date) -> bool:
        key = (theme.value, grid_sort_key(grid), acquired.toordinal())
        meta = self._image_meta.get(key)
        return meta.img_status if meta is not None else True

    def get_tile(
        self,
        theme: Theme,
        grid: GridId,
        level: PyramidLevel,
        sub_row: int,
        sub_col: int,
        acquired: dt.date | None = None,
    ) -> TileRecord | None:
        """Fetch one tile; the latest visible acquisition when no date given."""
        with self._lock:
            slot = (theme.value, level.value, grid_sort_key(grid), sub_row, sub_col)
            if acquired is not None:
                rec = self._tiles.get(slot + (acquired.toordinal(),))
                if rec is None or not self._visible(theme, grid, rec.acquired):
                    return None
                return rec
            best = None
            for key, rec in self._tiles.items():
                if key[:5] != slot:
                    continue
                if not self._visible(theme, grid, rec.acquired):
                    continue
                if best is None or rec.acquired > best.acquired:
                    best = rec
            return best

    def get_range(self, theme: Theme, level: PyramidLevel, grids: list[GridId]) -> list[TileRecord]:
        """All visible records for the given cells, in ascending key order."""
        with self._lock:
            wanted = {grid_sort_key(g) for g in grids}
            out = [
                rec
                for rec in self._tiles.values()
                if rec.theme is theme and rec.level is level
                and grid_sort_key(rec.grid) in wanted
                and self._visible(theme, rec.grid, rec.acquired)
            ]
        out.sort(key=lambda r: (grid_sort_key(r.grid), r.sub_row, r.sub_col,
                                r.acquired.toordinal()))
        return out

    def get_image_meta(self, theme: Theme, grid: GridId,
                       acquired: dt.date) -> ImageMetaRecord | None:
        with self._lock:
            return self._image_meta.get((theme.value, grid_sort_key(grid),
                                         acquired.toordinal()))

    def get_original_meta(self, source_id: str) -> OriginalMetadataRecord | None:
        with self._lock:
            return self._orig_meta.get((source_id,))

    def visible_cells(self, theme: Theme) -> list[GridId]:
        """Cells with at least one visible acquisition (coverage rendering)."""
        with self._lock:
            seen: dict[tuple, GridId] = {}
            for rec in self._image_meta.values():
                if rec.theme is theme and rec.img_status:
                    seen.setdefault(grid_sort_key(rec.grid), rec.grid)
            return [seen[k] for k in sorted(seen)]

    def latest_visible_acquired(self, theme: Theme, grid: GridId) -> dt.date | None:
        with self._lock:
            dates = [
                rec.acquired
                for rec in self._image_meta.values()
                if rec.theme is theme and grid_sort_key(rec.grid) == grid_sort_key(grid)
                and rec.img_status
            ]
            return max(dates) if dates else None

    # -- visibility, picks, hits ----------------------------------------------

    def hide_region(self, theme: Theme, grids: Iterable[GridId], visible: bool) -> int:
        """Flip visibility for every acquisition at the given cells."""
        with self._lock:
            wanted = {grid_sort_key(g) for g in grids}
            changed = [
                rec for rec in self._image_meta.values()
                if rec.theme is theme and grid_sort_key(rec.grid) in wanted
                and rec.img_status != visible
            ]
            if not changed:
                return 0
            epoch = self._epoch + 1
            stamped = [replace(r, img_status=visible, insert_epoch=epoch) for r in changed]
            self._append_wal(stamped)
            for rec in stamped:
                self._apply(rec)
            return len(stamped)

    def add_pick(self, title: str, theme: Theme, grid: GridId, caption: str = "") -> PickRecord:
        """Register a recommended image; the cell must be visibly covered."""
        with self._lock:
            if self.latest_visible_acquired(theme, grid) is None:
                raise StoreError(f"pick target {theme.value} cell has no visible imagery")
            epoch = self._epoch + 1
            rec = PickRecord(title=title, theme=theme, grid=grid, caption=caption,
                             insert_epoch=epoch)
            self._append_wal([rec])
            self._apply(rec)
            return rec

    def picks(self) -> list[PickRecord]:
        with self._lock:
            return sorted(self._picks.values(), key=lambda r: r.sort_key)

    def record_hit(self, kind: str, key: str, ts: str = "") -> int:
        """Bump the request counter for a grid cell or gazetteer query."""
        if kind not in ("grid", "gazetteer"):
            raise StoreError(f"unknown hit kind {kind!r}")
        with self._lock:
            cur = self._hits.get((kind, key))
            epoch = self._epoch + 1
            rec = HitRecord(kind=kind, key=key, count=(cur.count if cur else 0) + 1,
                            ts=ts, insert_epoch=epoch)
            self._append_wal([rec])
            self._apply(rec)
            return rec.count

    def top_hits(self, kind: str, n: int) -> list[HitRecord]:
        with self._lock:
            ranked = sorted(
                (r for r in self._hits.values() if r.kind == kind),
                key=lambda r: (-r.count, r.key),
            )
            return ranked[:n]

    # -- snapshots --------------------------------------------------------------

    def snapshot_full(self, path: str | Path) -> int:
        return self._snapshot(path, since_epoch=None)

    def snapshot_incremental(self, path: str | Path, since_epoch: int) -> int:
        return self._snapshot(path, since_epoch=since_epoch)

    def _snapshot(self, path: str | Path, since_epoch: int | None) -> int:
        with self._lock:
            records = [
                r for r in self._sorted_records()
                if since_epoch is None or r.insert_epoch > since_epoch
            ]
            lo = min((r.insert_epoch for r in records), default=0)
            hi = max((r.insert_epoch for r in records), default=self._epoch)
        body = b"".join(encode_record(r) for r in records)
        flags = 0 if since_epoch is None else 1
        trailer = _TRAILER_HEAD.pack(zlib.crc32(body), flags, len(records), lo, hi)
        Path(path).write_bytes(SNAPSHOT_MAGIC + body + trailer)
        return len(records)

    def restore(self, paths: Iterable[str | Path]) -> int:
        """Apply a full snapshot plus incrementals, verifying before applying.

        Every file is fully validated (magic, per-record CRC, trailer count
        and checksum) before any record touches the store; a corrupt
        snapshot aborts with the store unchanged.
        """
        validated: list[list[StoreRecord]] = []
        for p in paths:
            data = Path(p).read_bytes()
            if not data.startswith(SNAPSHOT_MAGIC) or len(data) < len(SNAPSHOT_MAGIC) + _TRAILER_HEAD.size:
                raise SnapshotError(f"{p}: not a snapshot file")
            body = data[len(SNAPSHOT_MAGIC):-_TRAILER_HEAD.size]
            crc, _flags, count, _lo, _hi = _TRAILER_HEAD.unpack(data[-_TRAILER_HEAD.size:])
            if zlib.crc32(body) != crc:
                raise SnapshotError(f"{p}: checksum mismatch")
            try:
                recs = list(_read_record_stream(body))
            except RecordCodecError as exc:
                raise SnapshotError(f"{p}: {exc}") from exc
            if len(recs) != count:
                raise SnapshotError(f"{p}: trailer count {count} != {len(recs)} records")
            validated.append(recs)

        applied = 0
        with self._lock:
            for recs in validated:
                if recs:
                    self._append_wal(recs)
                for rec in recs:
                    self._apply(rec)
                    applied += 1
        return applied

    # -- misc ---------------------------------------------------------------------

    @property
    def epoch(self) -> int:
        return self._epoch

    def stats(self) -> StoreStats:
        with self._lock:
            return StoreStats(
                tiles=len(self._tiles),
                image_meta=len(self._image_meta),
                original_meta=len(self._orig_meta),
                picks=len(self._picks),
                hits=len(self._hits),
                epoch=self._epoch,
                segments=len(list(self.segments_dir.glob("*.seg"))),
                wal_bytes=self.wal_path.stat().st_size if self.wal_path.exists() else 0,
            )

    def iter_disk_tiles(self) -> Iterator[TileRecord]:
        """Scan tile records straight off the segment files, in file order."""
        for seg in sorted(self.segments_dir.glob("*.seg")):
            for rec in _read_record_stream(seg.read_bytes()):
                if isinstance(rec, TileRecord):
                    yield rec
