"""Shared fixtures: synthetic source trees and seeded stores."""

import datetime as dt
import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from terratile.grid import UGridId, ugrid_to_extent
from terratile.pyramid import SourceImage, save_source
from terratile.raster import Raster, Theme, UtmAnchor
from terratile.synth import aerial_texture


def make_usgs_tree(root: Path, zone=10, bands=3, cuts_per_band=1, seed=100,
                   base_easting_index=278, base_band=400):
    # easting index 278 puts the cell's west edge exactly on the 500 km
    # false easting, i.e. the zone's central meridian
    """Write a small USGS source tree plus manifest: one source per cut.

    Band k of the default geometry holds northings [12000k, 12000(k+1));
    base_band picks which absolute bands are used.
    """
    root.mkdir(parents=True, exist_ok=True)
    manifest = []
    n = 0
    for b in range(bands):
        band_index = base_band + b
        for c in range(cuts_per_band):
            cell = UGridId.from_indices(zone, base_easting_index + c, band_index * 10)
            ext = ugrid_to_extent(cell)
            tex = aerial_texture(1800, 1200, seed=seed + n)
            src = SourceImage(
                Raster(tex, UtmAnchor(zone, ext.west, ext.north), 1.0),
                Theme.USGS, dt.date(1997, 5, 1 + n % 20), f"doqq-{zone}-{band_index}-{c:02d}",
            )
            raster_path = root / f"src{n:03d}.raw"
            sidecar_path = root / f"src{n:03d}.json"
            save_source(src, raster_path, sidecar_path)
            manifest.append({"path": str(raster_path), "sidecar_path": str(sidecar_path)})
            n += 1
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path


@pytest.fixture
def usgs_tree(tmp_path):
    return make_usgs_tree(tmp_path / "sources")
