"""terratile: a desk-scale geospatial atlas.

Ingests geo-anchored grayscale rasters, slices them into a clustered JPEG
tile pyramid keyed by bit-interleaved grid ids, stores tiles in a
log-structured single-file store, answers gazetteer name searches, and
serves mosaics over HTTP.
"""

from .grid import (
    CellExtent,
    GeoPoint,
    GridRangeError,
    UGridId,
    UtmCoord,
    ZGridId,
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
)
from .utm import ProjectionError, geo_to_utm, utm_to_geo

__all__ = [
    "CellExtent",
    "GeoPoint",
    "GridRangeError",
    "ProjectionError",
    "UGridId",
    "UtmCoord",
    "ZGridId",
    "deinterleave",
    "format_gridid",
    "geo_to_utm",
    "geo_to_zgrid",
    "interleave",
    "neighbors",
    "parse_gridid",
    "ugrid_range",
    "ugrid_to_extent",
    "utm_to_geo",
    "utm_to_ugrid",
    "zgrid_cell_count",
    "zgrid_range",
    "zgrid_to_extent",
]

__version__ = "0.1.0"
