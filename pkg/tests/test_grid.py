import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epimob import grid
from epimob.errors import InvalidInputError
from epimob.grid import FlatHexBackend, GeoPolygon

B = FlatHexBackend()

lat_st = st.floats(min_value=35.0, max_value=36.3, allow_nan=False)
lon_st = st.floats(min_value=139.0, max_value=140.5, allow_nan=False)


@given(lat_st, lon_st, st.integers(min_value=4, max_value=10))
def test_cell_of_center_stable(lat, lon, res):
    # A cell's own center must map back to the same cell.
    cell = B.cell_of(lat, lon, res)
    clat, clon = B.cell_center(cell)
    assert B.cell_of(clat, clon, res) == cell
    assert grid.cell_level(cell) == res


@given(lat_st, lon_st)
def test_hex_serialization_round_trip(lat, lon):
    cell = B.cell_of(lat, lon, 8)
    text = grid.cell_to_hex(cell)
    assert text == text.lower()
    assert grid.hex_to_cell(text) == cell


def test_center_within_half_cell_of_query():
    rng = np.random.Generator(np.random.Philox(1))
    size = B.cell_size_m(8)
    for _ in range(200):
        lat = 35.5 + rng.random() * 0.5
        lon = 139.4 + rng.random() * 0.5
        clat, clon = B.cell_center(B.cell_of(lat, lon, 8))
        dx = (lon - clon) * 111320 * math.cos(math.radians(35.6812))
        dy = (lat - clat) * 111320
        assert math.hypot(dx, dy) <= size + 1e-6


def test_cell_area_matches_reference():
    # Hex area = (3*sqrt(3)/2) * size^2 at the base level.
    size = B.cell_size_m(8)
    area_km2 = 1.5 * math.sqrt(3) * size * size / 1e6
    assert area_km2 == pytest.approx(grid.AREA_L8_KM2, rel=1e-9)
    # One level coarser covers 7x the area.
    s7 = B.cell_size_m(7)
    assert (s7 / size) ** 2 == pytest.approx(7.0, rel=1e-12)


def test_boundary_is_closed_hex_ring():
    cell = B.cell_of(35.7, 139.75, 8)
    ring = B.cell_boundary(cell)
    assert len(ring) == 7
    assert ring[0] == ring[-1]
    cx, cy = B._project(*B.cell_center(cell))
    for lat, lon in ring[:-1]:
        x, y = B._project(lat, lon)
        assert math.hypot(x - cx, y - cy) == pytest.approx(B.cell_size_m(8), rel=1e-6)


@given(lat_st, lon_st, st.integers(min_value=4, max_value=7))
@settings(max_examples=50)
def test_parent_contains_child_center(lat, lon, coarser):
    child = B.cell_of(lat, lon, 8)
    parent = B.parent_cell(child, coarser)
    assert grid.cell_level(parent) == coarser
    clat, clon = B.cell_center(child)
    assert B.cell_of(clat, clon, coarser) == parent


def test_parent_requires_coarser_level():
    cell = B.cell_of(35.7, 139.75, 8)
    with pytest.raises(InvalidInputError):
        B.parent_cell(cell, 8)
    with pytest.raises(InvalidInputError):
        B.parent_cell(cell, 9)


def test_cells_of_matches_scalar():
    rng = np.random.Generator(np.random.Philox(2))
    lats = 35.5 + rng.random(500) * 0.5
    lons = 139.4 + rng.random(500) * 0.5
    vec = B.cells_of(lats, lons, 8)
    scalar = np.array([B.cell_of(a, o, 8) for a, o in zip(lats, lons)])
    assert np.array_equal(vec, scalar)


def test_covering_square_contains_interior_centers():
    poly = GeoPolygon([(35.68, 139.70), (35.68, 139.78), (35.74, 139.78), (35.74, 139.70)])
    cells = B.cells_covering(poly, 8)
    assert cells
    # Every returned cell's center lies inside the rectangle.
    for c in cells:
        lat, lon = B.cell_center(c)
        assert 35.68 <= lat <= 35.74 and 139.70 <= lon <= 139.78
    # A point well inside maps to a covered cell.
    assert B.cell_of(35.71, 139.74, 8) in cells


def test_covering_tiny_polygon_falls_back_to_centroid_cell():
    eps = 1e-5
    poly = GeoPolygon([(35.70, 139.75), (35.70, 139.75 + eps), (35.70 + eps, 139.75 + eps), (35.70 + eps, 139.75)])
    cells = B.cells_covering(poly, 8)
    assert cells == {B.cell_of(35.70 + eps / 2, 139.75 + eps / 2, 8)}


def test_invalid_polygons_rejected():
    with pytest.raises(InvalidInputError):
        GeoPolygon([(35.7, 139.7), (35.8, 139.8)])  # too few vertices
    with pytest.raises(InvalidInputError):
        GeoPolygon([(91.0, 139.7), (35.8, 139.8), (35.9, 139.9)])
    # Self-intersecting bowtie is not a usable region.
    bowtie = GeoPolygon([(35.70, 139.70), (35.80, 139.80), (35.70, 139.80), (35.90, 139.70)])
    with pytest.raises(InvalidInputError):
        B.cells_covering(bowtie, 8)


def test_covering_zero_area_is_empty():
    line = GeoPolygon([(35.70, 139.70), (35.70, 139.72), (35.70, 139.74)])
    assert B.cells_covering(line, 8) == set()


def test_distinct_points_far_apart_get_distinct_cells():
    a = B.cell_of(35.70, 139.70, 8)
    b = B.cell_of(35.80, 139.90, 8)
    assert a != b
