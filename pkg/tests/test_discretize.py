import math

import pytest

from src.discretize import (
    METERS_PER_DEGREE,
    bbox_from_data,
    hour_of,
    locate,
    make_grid,
    region_bounds,
    region_centroid,
    step_of,
    time_bin_of,
)
from src.errors import GridError, OutOfBoundsError

MELBOURNE = (-38.0, -37.6, 144.7, 145.2)


class TestMakeGrid:
    def test_exact_division(self):
        side = 3000.0 / METERS_PER_DEGREE
        grid = make_grid((0.0, side, 0.0, side), 300.0)
        assert (grid.n_rows, grid.n_cols) == (10, 10)
        assert grid.n_regions == 100

    def test_ceil_behaviour(self):
        grid = make_grid((0.0, 3001.0 / METERS_PER_DEGREE, 0.0, 300.0 / METERS_PER_DEGREE), 300.0)
        assert (grid.n_rows, grid.n_cols) == (11, 1)

    def test_melbourne_rows(self):
        assert make_grid(MELBOURNE, 300.0).n_rows == 149

    @pytest.mark.parametrize("bbox", [
        (1.0, 1.0, 0.0, 1.0),
        (2.0, 1.0, 0.0, 1.0),
        (0.0, 1.0, 5.0, 4.0),
        (0.0, 1.0, 0.0),
        (-91.0, 1.0, 0.0, 1.0),
    ])
    def test_degenerate_bbox(self, bbox):
        with pytest.raises(GridError):
            make_grid(bbox, 300.0)

    def test_non_positive_cell(self):
        with pytest.raises(GridError):
            make_grid((0.0, 1.0, 0.0, 1.0), 0.0)


class TestLocate:
    def test_origin_is_region_zero(self, tiny_grid):
        assert locate(0.0, 0.0, tiny_grid) == 0

    def test_max_corner_clamps_into_last_cell(self, tiny_grid):
        assert locate(0.01, 0.01, tiny_grid) == tiny_grid.n_regions - 1

    def test_row_major_ids(self, tiny_grid):
        # 556.6 m north, 111 m east: row 1, col 0
        assert locate(0.005, 0.001, tiny_grid) == 3

    def test_outside_bbox(self, tiny_grid):
        with pytest.raises(OutOfBoundsError):
            locate(0.02, 0.0, tiny_grid)

    def test_table_one_location_row(self):
        grid = make_grid(MELBOURNE, 300.0)
        region = locate(-37.8219, 144.9785, grid)
        row, _ = divmod(region, grid.n_cols)
        assert row == math.floor((-37.8219 + 38.0) * METERS_PER_DEGREE / 300.0)

    def test_centroid_locates_back(self, tiny_grid):
        for region in range(tiny_grid.n_regions):
            assert locate(*region_centroid(region, tiny_grid), tiny_grid) == region

    def test_edge_cells_are_clipped(self, tiny_grid):
        lat_lo, lat_hi, lon_lo, lon_hi = region_bounds(tiny_grid.n_regions - 1, tiny_grid)
        assert lat_hi == tiny_grid.lat_max
        assert lon_hi == tiny_grid.lon_max
        assert lat_lo < lat_hi and lon_lo < lon_hi

    def test_region_bounds_rejects_unknown_region(self, tiny_grid):
        with pytest.raises(GridError):
            region_bounds(tiny_grid.n_regions, tiny_grid)


class TestTime:
    def test_table_one_local_hour(self):
        # 04:28:07 UTC in Melbourne summer time (UTC+11)
        assert hour_of(1484540887, tz_offset_minutes=660) == 15

    def test_midnight_and_last_second(self):
        assert hour_of(86400 * 10) == 0
        assert hour_of(86400 * 10 + 86399) == 23

    def test_daily_period(self):
        for ts in (1, 5000, 1484540887):
            assert hour_of(ts, 60) == hour_of(ts + 86400, 60)

    def test_negative_offset_wraps(self):
        assert hour_of(3600, tz_offset_minutes=-120) == 23

    def test_week_bins(self):
        monday = 1_484_524_800
        assert time_bin_of(monday, 0, 168) == 0
        assert time_bin_of(monday + 86400 + 5 * 3600, 0, 168) == 24 + 5
        # 1970-01-01 was a Thursday
        assert time_bin_of(1, 0, 168) == 3 * 24

    def test_unsupported_bins(self):
        with pytest.raises(GridError):
            time_bin_of(1000, 0, 48)

    def test_step_of(self):
        assert step_of(7200, 0, 3600) == 2
        assert step_of(7199, 0, 3600) == 1


def test_bbox_from_data_pads_extent():
    lat_min, lat_max, lon_min, lon_max = bbox_from_data([(1.0, 2.0), (3.0, 6.0)])
    assert lat_min == pytest.approx(0.98)
    assert lat_max == pytest.approx(3.02)
    assert lon_min == pytest.approx(1.96)
    assert lon_max == pytest.approx(6.04)


def test_bbox_from_single_point_is_not_degenerate():
    bbox = bbox_from_data([(10.0, 20.0)])
    grid = make_grid(bbox, 10.0)
    assert grid.contains(10.0, 20.0)


def test_bbox_from_no_points():
    with pytest.raises(GridError):
        bbox_from_data([])
