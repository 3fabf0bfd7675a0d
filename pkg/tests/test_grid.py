"""Morton interleave, grid-id encoding, neighbors, and range enumeration."""

import random

import pytest
from hypothesis import given, strategies as st

from terratile.grid import (
    GeoPoint,
    GridRangeError,
    UGridId,
    UtmCoord,
    ZGridId,
    ZGRID_LAT_CELLS,
    ZGRID_LON_CELLS,
    UGRID_E_CELLS,
    UGRID_N_CELLS,
    deinterleave,
    format_gridid,
    geo_to_zgrid,
    interleave,
    neighbors,
    parse_gridid,
    ugrid_range,
    ugrid_to_extent,
    utm_to_ugrid,
    zgrid_cell_count,
    zgrid_range,
    zgrid_to_extent,
    zgrid_indices,
)


def oracle_interleave(u: int, v: int) -> int:
    """Bit-by-bit reference: bit i of u -> 2i, bit i of v -> 2i+1."""
    out = 0
    for i in range(15):
        out |= ((u >> i) & 1) << (2 * i)
        out |= ((v >> i) & 1) << (2 * i + 1)
    return out


def oracle_deinterleave(code: int) -> tuple[int, int]:
    u = v = 0
    for i in range(15):
        u |= ((code >> (2 * i)) & 1) << i
        v |= ((code >> (2 * i + 1)) & 1) << i
    return u, v


class TestInterleave:
    def test_identity_case(self):
        assert interleave(0, 0) == 0

    def test_lane_assignment(self):
        assert interleave(1, 0) == 1
        assert interleave(0, 1) == 2

    def test_max_indices_against_oracle(self):
        # frozen from oracle_interleave(17279, 17279)
        assert interleave(17279, 17279) == 806305791
        assert interleave(17279, 17279) == oracle_interleave(17279, 17279)

    def test_range_errors(self):
        for bad in [(1 << 15, 0), (0, 1 << 15), (-1, 0), (0, -1)]:
            with pytest.raises(GridRangeError):
                interleave(*bad)
        with pytest.raises(GridRangeError):
            deinterleave(1 << 30)
        with pytest.raises(GridRangeError):
            deinterleave(-1)

    def test_deinterleave_trivial(self):
        assert deinterleave(0) == (0, 0)
        assert deinterleave(3) == (1, 1)

    def test_exhaustive_subgrid_against_oracle(self):
        for u in range(256):
            for v in range(256):
                code = interleave(u, v)
                assert code == oracle_interleave(u, v)
                assert deinterleave(code) == (u, v)

    @given(st.integers(0, (1 << 15) - 1), st.integers(0, (1 << 15) - 1))
    def test_round_trip_property(self, u, v):
        assert deinterleave(interleave(u, v)) == (u, v)

    @given(st.integers(0, (1 << 30) - 1))
    def test_random_codes_match_oracle(self, code):
        assert deinterleave(code) == oracle_deinterleave(code)

    def test_block_prefix_locality(self):
        # cells inside a 2^k-aligned 2^k x 2^k block share the top 30-2k bits
        rng = random.Random(7)
        for _ in range(200):
            k = rng.randrange(1, 8)
            base_u = rng.randrange(0, (1 << 15) - (1 << k)) & ~((1 << k) - 1)
            base_v = rng.randrange(0, (1 << 15) - (1 << k)) & ~((1 << k) - 1)
            ref = interleave(base_u, base_v) >> (2 * k)
            for _ in range(8):
                du = rng.randrange(1 << k)
                dv = rng.randrange(1 << k)
                assert interleave(base_u + du, base_v + dv) >> (2 * k) == ref


class TestZGrid:
    def test_southwest_origin(self):
        assert geo_to_zgrid(GeoPoint(-90.0, -180.0)).value == 0

    def test_top_corner(self):
        z = geo_to_zgrid(GeoPoint(89.999, 179.999))
        assert z.value == interleave(17279, 17279)

    def test_equator_greenwich(self):
        # indices freeze to (8640, 8640); code frozen from the bit-loop oracle
        assert zgrid_indices(GeoPoint(0.0, 0.0)) == (8640, 8640)
        assert geo_to_zgrid(GeoPoint(0.0, 0.0)).value == 201584640

    def test_north_pole_clamps(self):
        z = geo_to_zgrid(GeoPoint(90.0, 0.0))
        assert z.lat_index == ZGRID_LAT_CELLS - 1

    def test_antimeridian_wraps(self):
        assert GeoPoint(0.0, 180.0).lon == -180.0
        assert geo_to_zgrid(GeoPoint(0.0, 180.0)).lon_index == 0

    def test_extent_of_origin_cell(self):
        ext = zgrid_to_extent(ZGridId(0))
        assert (ext.west, ext.south) == (-180.0, -90.0)

    def test_extent_spans(self):
        ext = zgrid_to_extent(ZGridId(123456))
        assert ext.east - ext.west == pytest.approx(1.0 / 48.0)
        assert ext.north - ext.south == pytest.approx(1.0 / 96.0)

    def test_extent_center_round_trip(self):
        rng = random.Random(11)
        for _ in range(10_000):
            z = ZGridId(
                interleave(rng.randrange(ZGRID_LON_CELLS), rng.randrange(ZGRID_LAT_CELLS))
            )
            lon, lat = zgrid_to_extent(z).center
            assert geo_to_zgrid(GeoPoint(lat, lon)) == z

    def test_constant_within_cell(self):
        ext = zgrid_to_extent(geo_to_zgrid(GeoPoint(47.61, -122.33)))
        eps = 1e-6  # comfortably inside the edge-snap band
        for lat, lon in [
            (ext.south, ext.west),
            (ext.north - eps, ext.east - eps),
            ((ext.south + ext.north) / 2, (ext.west + ext.east) / 2),
        ]:
            assert geo_to_zgrid(GeoPoint(lat, lon)) == geo_to_zgrid(GeoPoint(47.61, -122.33))

    def test_cardinality(self):
        assert zgrid_cell_count() == 298_598_400
        assert ZGRID_LON_CELLS * ZGRID_LAT_CELLS == 298_598_400

    def test_geopoint_validation(self):
        with pytest.raises(GridRangeError):
            GeoPoint(90.001, 0.0)
        with pytest.raises(GridRangeError):
            GeoPoint(float("nan"), 0.0)


class TestUGrid:
    def test_zero_origin(self):
        g = utm_to_ugrid(UtmCoord(10, 0.0, 0.0))
        assert (g.easting_index, g.northing_index) == (0, 0)
        assert g.interleaved == 0

    def test_offset_shifts_cell_boundary(self):
        # easting 1400 then 1200 m of northing: indices (1, 1), code 3
        g = utm_to_ugrid(UtmCoord(10, 1400.0, 1200.0))
        assert (g.easting_index, g.northing_index) == (1, 1)
        assert g.interleaved == 3
        assert g.interleaved == oracle_interleave(1, 1)

    def test_adjacent_cells_share_prefix(self):
        # brute-force a 4x4 neighborhood: 2x2-aligned blocks share all but low 2 bits
        for base_e in (100, 101):
            for base_n in (200, 201):
                codes = set()
                e0, n0 = base_e & ~1, base_n & ~1
                for de in (0, 1):
                    for dn in (0, 1):
                        codes.add(interleave(e0 + de, n0 + dn))
                assert len({c >> 2 for c in codes}) == 1

    def test_extent(self):
        g = UGridId.from_indices(13, 2, 3)
        ext = ugrid_to_extent(g)
        assert ext.west == 2 * 1800 - 400
        assert ext.south == 3 * 1200
        assert ext.east - ext.west == 1800
        assert ext.north - ext.south == 1200
        assert ext.zone == 13


class TestNeighbors:
    def test_interior_zgrid(self):
        got = neighbors(ZGridId.from_indices(100, 100))
        assert len(got) == 8

    def test_pole_row_clamps(self):
        got = neighbors(ZGridId.from_indices(100, 0))
        assert len(got) == 5
        got = neighbors(ZGridId.from_indices(100, ZGRID_LAT_CELLS - 1))
        assert len(got) == 5

    def test_longitude_wraps(self):
        got = neighbors(ZGridId.from_indices(0, 100))
        assert len(got) == 8
        wrapped = {deinterleave(g.value)[0] for g in got}
        assert ZGRID_LON_CELLS - 1 in wrapped

    def test_ugrid_corner(self):
        got = neighbors(UGridId.from_indices(10, 0, 0))
        assert len(got) == 3
        assert all(g.zone == 10 for g in got)

    def test_random_cells_match_index_oracle(self):
        rng = random.Random(23)
        for _ in range(1000):
            u = rng.randrange(ZGRID_LON_CELLS)
            v = rng.randrange(ZGRID_LAT_CELLS)
            expect = set()
            for du in (-1, 0, 1):
                for dv in (-1, 0, 1):
                    if du == dv == 0:
                        continue
                    nv = v + dv
                    if 0 <= nv < ZGRID_LAT_CELLS:
                        expect.add(((u + du) % ZGRID_LON_CELLS, nv))
            got = {deinterleave(g.value) for g in neighbors(ZGridId.from_indices(u, v))}
            assert got == expect

    def test_neighbors_within_two_index_steps(self):
        g = ZGridId.from_indices(5000, 5000)
        for n in neighbors(g):
            du = abs(n.lon_index - 5000)
            dv = abs(n.lat_index - 5000)
            assert du <= 2 and dv <= 2


class TestRangeCells:
    def test_single_cell_box(self):
        ext = zgrid_to_extent(ZGridId.from_indices(40, 50))
        got = zgrid_range(ext.west, ext.south, ext.east, ext.north)
        assert got == [ZGridId.from_indices(40, 50)]

    def test_two_by_two(self):
        w, e = 40 / 48 - 180, 42 / 48 - 180
        s, n = 50 / 96 - 90, 52 / 96 - 90
        got = zgrid_range(w, s, e, n)
        assert len(got) == 4
        values = [g.value for g in got]
        assert values == sorted(values)

    def test_empty_box(self):
        assert zgrid_range(10.0, 10.0, 10.0, 20.0) == []
        assert zgrid_range(10.0, 10.0, 9.0, 20.0) == []

    def test_matches_rectangle_scan_oracle(self):
        rng = random.Random(31)
        for _ in range(50):
            u0 = rng.randrange(0, ZGRID_LON_CELLS - 6)
            v0 = rng.randrange(0, ZGRID_LAT_CELLS - 6)
            du = rng.randrange(1, 5)
            dv = rng.randrange(1, 5)
            w = u0 / 48 - 180 + rng.random() / 48
            s = v0 / 96 - 90 + rng.random() / 96
            e = (u0 + du) / 48 - 180 + rng.random() / 48
            n = (v0 + dv) / 96 - 90 + rng.random() / 96
            got = [deinterleave(g.value) for g in zgrid_range(w, s, e, n)]
            expect = []
            for u in range(max(u0 - 2, 0), min(u0 + du + 3, ZGRID_LON_CELLS)):
                for v in range(max(v0 - 2, 0), min(v0 + dv + 3, ZGRID_LAT_CELLS)):
                    cw = u / 48 - 180
                    cs = v / 96 - 90
                    if cw < e and cw + 1 / 48 > w and cs < n and cs + 1 / 96 > s:
                        expect.append((u, v))
            expect.sort(key=lambda t: interleave(*t))
            assert got == expect

    def test_morton_order_strictly_ascending(self):
        got = zgrid_range(-122.5, 47.0, -121.5, 48.0)
        values = [g.value for g in got]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_ugrid_range(self):
        got = ugrid_range(10, 0.0, 0.0, 3600.0, 2400.0)
        assert len(got) == 6  # easting offset splits [0,3600) across 3 columns
        codes = [g.interleaved for g in got]
        assert codes == sorted(codes)
        idx = {(g.easting_index, g.northing_index) for g in got}
        assert idx == {(e, n) for e in (0, 1, 2) for n in (0, 1)}


class TestGridIdText:
    def test_round_trip(self):
        for g in [ZGridId(0), ZGridId(806305791), UGridId(10, 0), UGridId(60, 44961519)]:
            assert parse_gridid(format_gridid(g)) == g

    def test_malformed(self):
        for s in ["", "q10", "u10", "u-3", "zx", "u10-99999999999999"]:
            with pytest.raises(GridRangeError):
                parse_gridid(s)
