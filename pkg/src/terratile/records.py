"""Store record types and their canonical binary framing.

Every persistent object (tile, image metadata, source metadata, pick, hit
counter) serializes to one frame::

    [u32 length] [u32 crc32 of payload] [payload]
    payload = [u8 kind] [u32 header length] [canonical JSON header] [blob]

Only tiles carry a blob; for the rest the blob section is empty.  Headers
are JSON with sorted keys so identical logical records always produce
identical bytes, which is what makes snapshot comparisons meaningful.
"""

from __future__ import annotations

import datetime as dt
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

from .grid import GridId, UGridId, ZGridId, format_gridid, parse_gridid
from .pyramid import PyramidLevel
from .raster import Theme

_FRAME = struct.Struct(">II")
_PAYLOAD_HEAD = struct.Struct(">BI")

KIND_TILE = 1
KIND_IMAGE_META = 2
KIND_ORIGINAL_META = 3
KIND_PICK = 4
KIND_HIT = 5

LEVEL_RANK = {
    PyramidLevel.TILE: 0,
    PyramidLevel.BROWSE: 1,
    PyramidLevel.THUMB: 2,
    PyramidLevel.JUMP: 3,
}


class RecordCodecError(ValueError):
    """A frame failed structural or checksum validation."""


def grid_sort_key(grid: GridId) -> tuple[int, int]:
    """(zone, interleaved) ordering; z-grid ids sort with zone 0."""
    if isinstance(grid, UGridId):
        return (grid.zone, grid.interleaved)
    return (0, grid.value)


@dataclass(frozen=True)
class TileRecord:
    theme: Theme
    grid: GridId
    level: PyramidLevel
    sub_row: int
    sub_col: int
    blob: bytes
    acquired: dt.date
    encrypted: bool = False
    key_id: str | None = None
    insert_epoch: int = 0

    @property
    def slot(self) -> tuple:
        """Identity without the acquisition date (USGS replacement slot)."""
        return (self.theme.value, self.level.value, grid_sort_key(self.grid),
                self.sub_row, self.sub_col)

    @property
    def full_key(self) -> tuple:
        return self.slot + (self.acquired.toordinal(),)

    @property
    def sort_key(self) -> tuple:
        """Physical clustering order: theme, level, Morton key, position."""
        return (self.theme.value, LEVEL_RANK[self.level], grid_sort_key(self.grid),
                self.sub_row, self.sub_col, self.acquired.toordinal())


@dataclass(frozen=True)
class ImageMetaRecord:
    theme: Theme
    grid: GridId
    acquired: dt.date
    source: str
    img_status: bool = True
    key_id: str | None = None
    key_hex: str | None = None          # the tile key itself lives in metadata
    center_place_name: str | None = None
    insert_epoch: int = 0

    @property
    def full_key(self) -> tuple:
        return (self.theme.value, grid_sort_key(self.grid), self.acquired.toordinal())

    @property
    def sort_key(self) -> tuple:
        return self.full_key


@dataclass(frozen=True)
class OriginalMetadataRecord:
    source_id: str
    img_source: Theme
    image_type: str                     # JPEG | TIFF
    instrument: str = ""
    acquired_date: dt.date | None = None
    processed_date: dt.date | None = None
    resolution_m: float | None = None
    width: int | None = None
    height: int | None = None
    attributes: dict = field(default_factory=dict)
    insert_epoch: int = 0

    IMAGE_TYPES = ("JPEG", "TIFF")

    def __post_init__(self):
        if self.image_type not in self.IMAGE_TYPES:
            raise RecordCodecError(f"image_type {self.image_type!r} not in {self.IMAGE_TYPES}")

    @property
    def full_key(self) -> tuple:
        return (self.source_id,)

    @property
    def sort_key(self) -> tuple:
        return self.full_key


@dataclass(frozen=True)
class PickRecord:
    title: str
    theme: Theme
    grid: GridId
    caption: str = ""
    insert_epoch: int = 0

    @property
    def full_key(self) -> tuple:
        return (self.theme.value, grid_sort_key(self.grid), self.title)

    @property
    def sort_key(self) -> tuple:
        return self.full_key


@dataclass(frozen=True)
class HitRecord:
    kind: str                           # "grid" | "gazetteer"
    key: str
    count: int = 0
    ts: str = ""                        # ISO timestamp of the latest hit
    insert_epoch: int = 0

    @property
    def full_key(self) -> tuple:
        return (self.kind, self.key)

    @property
    def sort_key(self) -> tuple:
        return self.full_key


StoreRecord = TileRecord | ImageMetaRecord | OriginalMetadataRecord | PickRecord | HitRecord


def _date(s: str | None) -> dt.date | None:
    return dt.date.fromisoformat(s) if s else None


def encode_record(rec: StoreRecord) -> bytes:
    if isinstance(rec, TileRecord):
        kind, blob = KIND_TILE, rec.blob
        header = {
            "theme": rec.theme.value, "grid": format_gridid(rec.grid),
            "level": rec.level.value, "sub_row": rec.sub_row, "sub_col": rec.sub_col,
            "acquired": rec.acquired.isoformat(), "encrypted": rec.encrypted,
            "key_id": rec.key_id, "epoch": rec.insert_epoch,
        }
    elif isinstance(rec, ImageMetaRecord):
        kind, blob = KIND_IMAGE_META, b""
        header = {
            "theme": rec.theme.value, "grid": format_gridid(rec.grid),
            "acquired": rec.acquired.isoformat(), "source": rec.source,
            "img_status": rec.img_status, "key_id": rec.key_id, "key_hex": rec.key_hex,
            "center_place_name": rec.center_place_name, "epoch": rec.insert_epoch,
        }
    elif isinstance(rec, OriginalMetadataRecord):
        kind, blob = KIND_ORIGINAL_META, b""
        header = {
            "source_id": rec.source_id, "img_source": rec.img_source.value,
            "image_type": rec.image_type, "instrument": rec.instrument,
            "acquired_date": rec.acquired_date.isoformat() if rec.acquired_date else None,
            "processed_date": rec.processed_date.isoformat() if rec.processed_date else None,
            "resolution_m": rec.resolution_m, "width": rec.width, "height": rec.height,
            "attributes": rec.attributes, "epoch": rec.insert_epoch,
        }
    elif isinstance(rec, PickRecord):
        kind, blob = KIND_PICK, b""
        header = {
            "title": rec.title, "theme": rec.theme.value, "grid": format_gridid(rec.grid),
            "caption": rec.caption, "epoch": rec.insert_epoch,
        }
    elif isinstance(rec, HitRecord):
        kind, blob = KIND_HIT, b""
        header = {
            "kind": rec.kind, "key": rec.key, "count": rec.count, "ts": rec.ts,
            "epoch": rec.insert_epoch,
        }
    else:
        raise RecordCodecError(f"unknown record type {type(rec)!r}")

    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = _PAYLOAD_HEAD.pack(kind, len(hjson)) + hjson + blob
    return _FRAME.pack(len(payload), zlib.crc32(payload)) + payload


def decode_record(payload: bytes) -> StoreRecord:
    kind, hlen = _PAYLOAD_HEAD.unpack_from(payload, 0)
    off = _PAYLOAD_HEAD.size
    h = json.loads(payload[off:off + hlen].decode())
    blob = payload[off + hlen:]
    if kind == KIND_TILE:
        return TileRecord(
            theme=Theme(h["theme"]), grid=parse_gridid(h["grid"]),
            level=PyramidLevel(h["level"]), sub_row=h["sub_row"], sub_col=h["sub_col"],
            blob=blob, acquired=_date(h["acquired"]), encrypted=h["encrypted"],
            key_id=h["key_id"], insert_epoch=h["epoch"],
        )
    if kind == KIND_IMAGE_META:
        return ImageMetaRecord(
            theme=Theme(h["theme"]), grid=parse_gridid(h["grid"]),
            acquired=_date(h["acquired"]), source=h["source"], img_status=h["img_status"],
            key_id=h["key_id"], key_hex=h["key_hex"],
            center_place_name=h["center_place_name"], insert_epoch=h["epoch"],
        )
    if kind == KIND_ORIGINAL_META:
        return OriginalMetadataRecord(
            source_id=h["source_id"], img_source=Theme(h["img_source"]),
            image_type=h["image_type"], instrument=h["instrument"],
            acquired_date=_date(h["acquired_date"]), processed_date=_date(h["processed_date"]),
            resolution_m=h["resolution_m"], width=h["width"], height=h["height"],
            attributes=h["attributes"], insert_epoch=h["epoch"],
        )
    if kind == KIND_PICK:
        return PickRecord(
            title=h["title"], theme=Theme(h["theme"]), grid=parse_gridid(h["grid"]),
            caption=h["caption"], insert_epoch=h["epoch"],
        )
    if kind == KIND_HIT:
        return HitRecord(kind=h["kind"], key=h["key"], count=h["count"], ts=h["ts"],
                         insert_epoch=h["epoch"])
    raise RecordCodecError(f"unknown record kind {kind}")


def write_frame(fh: BinaryIO, encoded: bytes) -> None:
    fh.write(encoded)


def read_frames(data: bytes, *, strict: bool = True) -> Iterator[StoreRecord]:
    """Decode a concatenated frame stream.

    strict=True raises on any damage; strict=False stops quietly at the
    first bad frame (write-ahead-log tail recovery).
    """
    off = 0
    n = len(data)
    while off < n:
        if off + _FRAME.size > n:
            if strict:
                raise RecordCodecError("truncated frame header")
            return
        length, crc = _FRAME.unpack_from(data, off)
        start = off + _FRAME.size
        end = start + length
        if end > n:
            if strict:
                raise RecordCodecError("truncated frame body")
            return
        payload = data[start:end]
        if zlib.crc32(payload) != crc:
            if strict:
                raise RecordCodecError(f"crc mismatch at offset {off}")
            return
        yield decode_record(payload)
        off = end
