"""Store engine: bulk load, reads, visibility, hits, snapshots, compaction."""

import datetime as dt
import random

import pytest

from terratile.grid import UGridId, ZGridId
from terratile.pyramid import PyramidLevel
from terratile.raster import Theme
from terratile.records import (
    HitRecord,
    ImageMetaRecord,
    OriginalMetadataRecord,
    TileRecord,
    decode_record,
    encode_record,
)
from terratile.store import SnapshotError, StoreError, TileStore

D = dt.date
CELL = UGridId.from_indices(10, 100, 200)
ZCELL = ZGridId.from_indices(5000, 6000)


def usgs_batch(cell=CELL, acquired=D(1997, 7, 1), payload=b"jpegbytes"):
    """A miniature cut batch: 4 tiles + pyramid levels + metadata."""
    tiles = [
        TileRecord(Theme.USGS, cell, PyramidLevel.TILE, r, c, payload + bytes([r, c]), acquired)
        for r in range(2)
        for c in range(2)
    ]
    tiles += [
        TileRecord(Theme.USGS, cell, level, 0, 0, payload + level.value.encode(), acquired)
        for level in (PyramidLevel.BROWSE, PyramidLevel.THUMB, PyramidLevel.JUMP)
    ]
    meta = [ImageMetaRecord(Theme.USGS, cell, acquired, source="src-1")]
    orig = [OriginalMetadataRecord(source_id=f"src-{cell.interleaved}-{acquired}",
                                   img_source=Theme.USGS, image_type="JPEG")]
    return tiles, meta, orig


def spin2_tile(acquired, payload=b"enc"):
    return TileRecord(Theme.SPIN2, ZCELL, PyramidLevel.TILE, 1, 1, payload, acquired,
                      encrypted=True, key_id="k1")


class TestRecordCodec:
    def test_round_trip_every_kind(self):
        recs = [
            TileRecord(Theme.USGS, CELL, PyramidLevel.TILE, 3, 4, b"\x00\xff", D(1997, 1, 2),
                       insert_epoch=7),
            ImageMetaRecord(Theme.SPIN2, ZCELL, D(1998, 3, 4), "s", img_status=False,
                            key_id="k", key_hex="00ff", center_place_name="Somewhere",
                            insert_epoch=9),
            OriginalMetadataRecord("sid", Theme.SPIN2, "TIFF", instrument="KVR-1000",
                                   acquired_date=D(1996, 5, 6), resolution_m=1.56,
                                   width=12800, height=12800,
                                   attributes={"roll": "r-22", "pass": 3}, insert_epoch=2),
            HitRecord("grid", "u10-0000012345", count=4, ts="1998-06-24T12:00:00"),
        ]
        for rec in recs:
            enc = encode_record(rec)
            assert decode_record(enc[8:]) == rec

    def test_encoding_is_deterministic(self):
        a = TileRecord(Theme.USGS, CELL, PyramidLevel.JUMP, 0, 0, b"x", D(1997, 1, 1))
        assert encode_record(a) == encode_record(a)


class TestPutAndGet:
    def test_idempotent_batch(self, tmp_path):
        store = TileStore(tmp_path)
        tiles, meta, orig = usgs_batch()
        assert store.put_tiles(tiles, meta, orig) == 7
        assert store.put_tiles(tiles, meta, orig) == 0
        assert store.stats().tiles == 7

    def test_get_returns_identical_blob(self, tmp_path):
        store = TileStore(tmp_path)
        tiles, meta, orig = usgs_batch()
        store.put_tiles(tiles, meta, orig)
        got = store.get_tile(Theme.USGS, CELL, PyramidLevel.TILE, 1, 0)
        assert got is not None
        assert got.blob == b"jpegbytes\x01\x00"

    def test_usgs_newer_replaces(self, tmp_path):
        store = TileStore(tmp_path)
        t1, m1, o1 = usgs_batch(acquired=D(1996, 1, 1), payload=b"old")
        t2, m2, o2 = usgs_batch(acquired=D(1998, 1, 1), payload=b"new")
        store.put_tiles(t1, m1, o1)
        before = store.stats().tiles
        store.put_tiles(t2, m2, o2)
        assert store.stats().tiles == before
        got = store.get_tile(Theme.USGS, CELL, PyramidLevel.TILE, 0, 0)
        assert got.acquired == D(1998, 1, 1)
        # inserting the older batch again is a no-op: the slot moved on
        assert store.put_tiles(t1, m1, o1) == 0
        assert store.get_tile(Theme.USGS, CELL, PyramidLevel.TILE, 0, 0).acquired == D(1998, 1, 1)

    def test_spin2_keeps_duplicate_cells(self, tmp_path):
        store = TileStore(tmp_path)
        a = spin2_tile(D(1996, 6, 1), b"first")
        b = spin2_tile(D(1998, 6, 1), b"second")
        store.put_tiles([a], [ImageMetaRecord(Theme.SPIN2, ZCELL, a.acquired, "s")], [])
        store.put_tiles([b], [ImageMetaRecord(Theme.SPIN2, ZCELL, b.acquired, "s")], [])
        assert store.stats().tiles == 2
        latest = store.get_tile(Theme.SPIN2, ZCELL, PyramidLevel.TILE, 1, 1)
        assert latest.blob == b"second"
        dated = store.get_tile(Theme.SPIN2, ZCELL, PyramidLevel.TILE, 1, 1, acquired=D(1996, 6, 1))
        assert dated.blob == b"first"

    def test_latest_matches_full_scan_oracle(self, tmp_path):
        store = TileStore(tmp_path)
        rng = random.Random(3)
        dates = [D(1995 + i, 1 + rng.randrange(12), 1 + rng.randrange(28)) for i in range(5)]
        for d in dates:
            store.put_tiles([spin2_tile(d, d.isoformat().encode())],
                            [ImageMetaRecord(Theme.SPIN2, ZCELL, d, "s")], [])
        got = store.get_tile(Theme.SPIN2, ZCELL, PyramidLevel.TILE, 1, 1)
        assert got.acquired == max(dates)

    def test_batch_rejected_atomically(self, tmp_path):
        store = TileStore(tmp_path)
        good = TileRecord(Theme.USGS, CELL, PyramidLevel.TILE, 0, 0, b"x", D(1997, 1, 1))
        bad = TileRecord(Theme.USGS, CELL, PyramidLevel.TILE, 9, 0, b"x", D(1997, 1, 1))
        with pytest.raises(StoreError):
            store.put_tiles([good, bad])
        assert store.stats().tiles == 0

    def test_absent_is_none_not_error(self, tmp_path):
        store = TileStore(tmp_path)
        assert store.get_tile(Theme.USGS, CELL, PyramidLevel.TILE, 0, 0) is None


class TestRangeAndOrder:
    def test_range_sorted_and_visible_only(self, tmp_path):
        store = TileStore(tmp_path)
        cells = [UGridId.from_indices(10, e, n) for e in (3, 4, 5) for n in (7, 8)]
        rng = random.Random(1)
        shuffled = cells[:]
        rng.shuffle(shuffled)
        for cell in shuffled:
            tiles, meta, orig = usgs_batch(cell=cell)
            store.put_tiles(tiles, meta, orig)
        got = store.get_range(Theme.USGS, PyramidLevel.TILE, cells)
        keys = [(r.grid.interleaved, r.sub_row, r.sub_col) for r in got]
        assert keys == sorted(keys)
        assert len(got) == len(cells) * 4

    def test_empty_region(self, tmp_path):
        store = TileStore(tmp_path)
        assert store.get_range(Theme.USGS, PyramidLevel.TILE, [CELL]) == []

    def test_disk_order_after_compaction(self, tmp_path):
        store = TileStore(tmp_path, segment_bytes=512)
        cells = [UGridId.from_indices(10, e, n) for e in (9, 3, 6) for n in (2, 11, 5)]
        for cell in cells:
            tiles, meta, orig = usgs_batch(cell=cell)
            store.put_tiles(tiles, meta, orig)
        store.compact()
        disk = [(r.theme.value, r.level.value, r.grid.interleaved) for r in store.iter_disk_tiles()]
        ranks = [
            (t, {"tile": 0, "browse": 1, "thumb": 2, "jump": 3}[lv], code)
            for t, lv, code in disk
        ]
        assert ranks == sorted(ranks)
        assert store.stats().segments > 1

    def test_reload_after_compaction(self, tmp_path):
        store = TileStore(tmp_path)
        tiles, meta, orig = usgs_batch()
        store.put_tiles(tiles, meta, orig)
        store.compact()
        store.record_hit("grid", "after-compact")
        again = TileStore(tmp_path)
        assert again.stats().tiles == 7
        assert again.top_hits("grid", 1)[0].key == "after-compact"


class TestVisibility:
    def test_hide_then_get_absent(self, tmp_path):
        store = TileStore(tmp_path)
        tiles, meta, orig = usgs_batch()
        store.put_tiles(tiles, meta, orig)
        n = store.hide_region(Theme.USGS, [CELL], visible=False)
        assert n == 1
        assert store.get_tile(Theme.USGS, CELL, PyramidLevel.TILE, 0, 0) is None
        assert store.get_range(Theme.USGS, PyramidLevel.TILE, [CELL]) == []
        assert store.visible_cells(Theme.USGS) == []

    def test_unhide_restores_bytes(self, tmp_path):
        store = TileStore(tmp_path)
        tiles, meta, orig = usgs_batch()
        store.put_tiles(tiles, meta, orig)
        before = store.get_tile(Theme.USGS, CELL, PyramidLevel.TILE, 0, 0).blob
        store.hide_region(Theme.USGS, [CELL], visible=False)
        store.hide_region(Theme.USGS, [CELL], visible=True)
        assert store.get_tile(Theme.USGS, CELL, PyramidLevel.TILE, 0, 0).blob == before

    def test_hide_covers_all_acquisitions(self, tmp_path):
        store = TileStore(tmp_path)
        for d in (D(1996, 1, 1), D(1998, 1, 1)):
            store.put_tiles([spin2_tile(d, d.isoformat().encode())],
                            [ImageMetaRecord(Theme.SPIN2, ZCELL, d, "s")], [])
        assert store.hide_region(Theme.SPIN2, [ZCELL], visible=False) == 2
        for d in (D(1996, 1, 1), D(1998, 1, 1)):
            assert store.get_tile(Theme.SPIN2, ZCELL, PyramidLevel.TILE, 1, 1, acquired=d) is None

    def test_hide_absent_cell_zero(self, tmp_path):
        store = TileStore(tmp_path)
        assert store.hide_region(Theme.USGS, [CELL], visible=False) == 0

    def test_pick_requires_visible_cell(self, tmp_path):
        store = TileStore(tmp_path)
        tiles, meta, orig = usgs_batch()
        store.put_tiles(tiles, meta, orig)
        store.add_pick("Ballpark", Theme.USGS, CELL, "A stadium")
        assert len(store.picks()) == 1
        store.hide_region(Theme.USGS, [CELL], visible=False)
        with pytest.raises(StoreError):
            store.add_pick("Hidden", Theme.USGS, CELL)


class TestHits:
    def test_counts(self, tmp_path):
        store = TileStore(tmp_path)
        assert store.record_hit("grid", "a") == 1
        for _ in range(4):
            store.record_hit("grid", "b")
        assert store.record_hit("grid", "a") == 2
        top = store.top_hits("grid", 5)
        assert [(h.key, h.count) for h in top] == [("b", 4), ("a", 2)]

    def test_ranking_matches_counting_oracle(self, tmp_path):
        store = TileStore(tmp_path)
        rng = random.Random(8)
        tally = {}
        for _ in range(200):
            key = f"cell-{rng.randrange(12)}"
            store.record_hit("gazetteer", key)
            tally[key] = tally.get(key, 0) + 1
        expect = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
        got = [(h.key, h.count) for h in store.top_hits("gazetteer", 5)]
        assert got == expect


class TestDurability:
    def test_reload_preserves_everything(self, tmp_path):
        store = TileStore(tmp_path)
        tiles, meta, orig = usgs_batch()
        store.put_tiles(tiles, meta, orig)
        store.hide_region(Theme.USGS, [CELL], visible=False)
        store.record_hit("grid", "k")
        reloaded = TileStore(tmp_path)
        assert reloaded.get_tile(Theme.USGS, CELL, PyramidLevel.TILE, 0, 0) is None
        assert reloaded.stats().tiles == 7
        assert reloaded.epoch == store.epoch

    def test_torn_wal_tail_dropped(self, tmp_path):
        store = TileStore(tmp_path)
        tiles, meta, orig = usgs_batch()
        store.put_tiles(tiles, meta, orig)
        with open(store.wal_path, "ab") as fh:
            fh.write(b"\x00\x01\x02garbage-that-is-not-a-frame")
        recovered = TileStore(tmp_path)
        assert recovered.stats().tiles == 7
        # appends after recovery stay readable
        recovered.record_hit("grid", "post-recovery")
        third = TileStore(tmp_path)
        assert third.top_hits("grid", 1)[0].key == "post-recovery"


class TestSnapshots:
    def _seed(self, store, k=3):
        for i in range(k):
            cell = UGridId.from_indices(10, 50 + i, 60)
            tiles, meta, orig = usgs_batch(cell=cell, acquired=D(1997, 3, 1 + i))
            store.put_tiles(tiles, meta, orig)

    def test_full_restore_equality(self, tmp_path):
        a = TileStore(tmp_path / "a")
        self._seed(a)
        a.record_hit("grid", "h", ts="1998-01-01T00:00:00")
        snap = tmp_path / "full.snap"
        n = a.snapshot_full(snap)
        b = TileStore(tmp_path / "b")
        assert b.restore([snap]) == n
        snap2 = tmp_path / "full2.snap"
        b.snapshot_full(snap2)
        assert snap.read_bytes() == snap2.read_bytes()

    def test_incremental_algebra(self, tmp_path):
        a = TileStore(tmp_path / "a")
        self._seed(a, k=2)
        k_epoch = a.epoch
        full_k = tmp_path / "full_k.snap"
        a.snapshot_full(full_k)
        # more activity after the checkpoint, including an update
        self._seed(a, k=4)
        a.hide_region(Theme.USGS, [UGridId.from_indices(10, 50, 60)], visible=False)
        inc = tmp_path / "inc.snap"
        a.snapshot_incremental(inc, since_epoch=k_epoch)
        full_m = tmp_path / "full_m.snap"
        a.snapshot_full(full_m)

        b = TileStore(tmp_path / "b")
        b.restore([full_k, inc])
        rebuilt = tmp_path / "rebuilt.snap"
        b.snapshot_full(rebuilt)
        assert rebuilt.read_bytes() == full_m.read_bytes()

    def test_incremental_after_no_inserts_empty(self, tmp_path):
        a = TileStore(tmp_path / "a")
        self._seed(a)
        inc = tmp_path / "inc.snap"
        assert a.snapshot_incremental(inc, since_epoch=a.epoch) == 0

    def test_corrupt_snapshot_aborts_cleanly(self, tmp_path):
        a = TileStore(tmp_path / "a")
        self._seed(a)
        snap = tmp_path / "full.snap"
        a.snapshot_full(snap)
        data = bytearray(snap.read_bytes())
        data[len(data) // 2] ^= 0xFF
        snap.write_bytes(bytes(data))
        b = TileStore(tmp_path / "b")
        b.record_hit("grid", "pre-existing")
        with pytest.raises(SnapshotError):
            b.restore([snap])
        assert b.stats().tiles == 0
        assert b.top_hits("grid", 1)[0].key == "pre-existing"
