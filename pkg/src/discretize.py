"""
Spatial and temporal discretization.
Coordinates map to equal-size grid cells, timestamps to hour bins.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GridError, OutOfBoundsError

METERS_PER_DEGREE = 111_320.0
SECONDS_PER_HOUR = 3600
SUPPORTED_TIME_BINS = (24, 168)


@dataclass(frozen=True)
class GridSpec:
    """Equirectangular grid over a lat/lon bounding box."""
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    cell_size_m: float
    n_rows: int
    n_cols: int

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.lat_min, self.lat_max, self.lon_min, self.lon_max)

    @property
    def n_regions(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def meters_per_degree_lon(self) -> float:
        mid = math.radians((self.lat_min + self.lat_max) / 2.0)
        return METERS_PER_DEGREE * math.cos(mid)

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max


def _ceil_cells(extent_m: float, cell_size_m: float) -> int:
    # Rounding guard: 3000 m / 300 m must give 10, not 11
    return max(1, math.ceil(round(extent_m / cell_size_m, 9)))


def make_grid(bbox: Sequence[float], cell_size_m: float = 300.0) -> GridSpec:
    """Build a grid of cell_size_m × cell_size_m cells over bbox = (lat_min, lat_max, lon_min, lon_max)."""
    if len(bbox) != 4:
        raise GridError(f"bbox must have 4 values, got {len(bbox)}")
    lat_min, lat_max, lon_min, lon_max = (float(v) for v in bbox)
    if not all(math.isfinite(v) for v in (lat_min, lat_max, lon_min, lon_max)):
        raise GridError(f"bbox must be finite: {bbox}")
    if not (lat_min < lat_max and lon_min < lon_max):
        raise GridError(f"Degenerate bbox {bbox}: need lat_min < lat_max and lon_min < lon_max")
    if not (-90.0 <= lat_min and lat_max <= 90.0 and -180.0 <= lon_min and lon_max <= 180.0):
        raise GridError(f"bbox outside valid coordinate ranges: {bbox}")
    if not cell_size_m > 0:
        raise GridError(f"cell size must be positive, got {cell_size_m}")

    mid = math.radians((lat_min + lat_max) / 2.0)
    ns_extent = (lat_max - lat_min) * METERS_PER_DEGREE
    ew_extent = (lon_max - lon_min) * METERS_PER_DEGREE * math.cos(mid)
    return GridSpec(
        lat_min=lat_min,
        lat_max=lat_max,
        lon_min=lon_min,
        lon_max=lon_max,
        cell_size_m=float(cell_size_m),
        n_rows=_ceil_cells(ns_extent, cell_size_m),
        n_cols=_ceil_cells(ew_extent, cell_size_m),
    )


def locate(lat: float, lon: float, grid: GridSpec) -> int:
    """
    RegionId = row * n_cols + col, by floor division of the offsets from the bbox origin.
    Points on the max edges clamp into the last cell; points outside raise OutOfBoundsError.
    """
    if not grid.contains(lat, lon):
        raise OutOfBoundsError(f"({lat}, {lon}) outside bbox {grid.bbox}")
    row = int(math.floor((lat - grid.lat_min) * METERS_PER_DEGREE / grid.cell_size_m))
    col = int(math.floor((lon - grid.lon_min) * grid.meters_per_degree_lon / grid.cell_size_m))
    row = min(max(row, 0), grid.n_rows - 1)
    col = min(max(col, 0), grid.n_cols - 1)
    return row * grid.n_cols + col


def region_bounds(region: int, grid: GridSpec) -> tuple[float, float, float, float]:
    """(lat_lo, lat_hi, lon_lo, lon_hi) of a cell, clipped to the bbox."""
    if not 0 <= region < grid.n_regions:
        raise GridError(f"region {region} outside [0, {grid.n_regions})")
    row, col = divmod(region, grid.n_cols)
    dlat = grid.cell_size_m / METERS_PER_DEGREE
    dlon = grid.cell_size_m / grid.meters_per_degree_lon
    lat_lo = grid.lat_min + row * dlat
    lon_lo = grid.lon_min + col * dlon
    return (
        lat_lo,
        min(lat_lo + dlat, grid.lat_max),
        lon_lo,
        min(lon_lo + dlon, grid.lon_max),
    )


def region_centroid(region: int, grid: GridSpec) -> tuple[float, float]:
    lat_lo, lat_hi, lon_lo, lon_hi = region_bounds(region, grid)
    return ((lat_lo + lat_hi) / 2.0, (lon_lo + lon_hi) / 2.0)


def bbox_from_data(points: Iterable[tuple[float, float]], pad: float = 0.01) -> tuple[float, float, float, float]:
    """Min/max of the observed points, padded by `pad` of each extent."""
    arr = np.asarray(list(points), dtype=np.float64)
    if arr.size == 0:
        raise GridError("Cannot derive a bbox: no geotagged points")
    lat_min, lon_min = arr.min(axis=0)
    lat_max, lon_max = arr.max(axis=0)
    # A single point still needs a non-degenerate box
    lat_pad = max((lat_max - lat_min) * pad, 1e-4)
    lon_pad = max((lon_max - lon_min) * pad, 1e-4)
    return (
        max(lat_min - lat_pad, -90.0),
        min(lat_max + lat_pad, 90.0),
        max(lon_min - lon_pad, -180.0),
        min(lon_max + lon_pad, 180.0),
    )


def hour_of(timestamp: float, tz_offset_minutes: int = 0) -> int:
    """Hour-of-day (0–23) of an epoch timestamp in local time."""
    local = int(math.floor(timestamp)) + int(tz_offset_minutes) * 60
    return (local // SECONDS_PER_HOUR) % 24


def time_bin_of(timestamp: float, tz_offset_minutes: int = 0, time_bins: int = 24) -> int:
    """Hour-of-day bin (24) or day-of-week × hour bin (168, Monday 00h = 0)."""
    if time_bins == 24:
        return hour_of(timestamp, tz_offset_minutes)
    if time_bins == 168:
        local = int(math.floor(timestamp)) + int(tz_offset_minutes) * 60
        # 1970-01-01 was a Thursday (weekday 3)
        weekday = (local // 86400 + 3) % 7
        return weekday * 24 + hour_of(timestamp, tz_offset_minutes)
    raise GridError(f"time_bins must be one of {SUPPORTED_TIME_BINS}, got {time_bins}")


def step_of(timestamp: float, origin: float, step_seconds: int) -> int:
    """Index of the stream step containing timestamp."""
    return int(math.floor((timestamp - origin) / step_seconds))
