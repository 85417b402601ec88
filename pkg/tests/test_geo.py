import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbangraph.geo import (
    DegeneratePolygon,
    GeoPoint,
    GeoPolygon,
    InvalidCoordinate,
    distance_km,
    point_in_polygon,
    polygon_centroid,
)

from conftest import R_EARTH

lats = st.floats(-90, 90, allow_nan=False)
lons = st.floats(-180, 180, allow_nan=False)
points = st.builds(GeoPoint, lats, lons)


def test_identity_distance():
    p = GeoPoint(41.88, -87.63)
    assert distance_km(p, p) == 0.0


def test_one_degree_on_equator():
    # spherical law of cosines: cos(dsigma) = cos(1 deg) on the equator, so dsigma = 1 deg
    expected = R_EARTH * math.radians(1.0)
    assert distance_km(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(111.195, abs=5e-4)
    assert distance_km(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("lat,lon", [(91, 0), (-90.5, 0), (0, 180.01), (float("nan"), 0), (0, float("inf"))])
def test_invalid_coordinates(lat, lon):
    with pytest.raises(InvalidCoordinate):
        GeoPoint(lat, lon)


@given(points, points)
def test_symmetry_and_bounds(a, b):
    d = distance_km(a, b)
    assert d == distance_km(b, a)
    assert 0.0 <= d <= math.pi * R_EARTH + 1e-9


@given(points, points, points)
def test_triangle_inequality(a, b, c):
    assert distance_km(a, c) <= distance_km(a, b) + distance_km(b, c) + 1e-9


def test_zero_iff_identical():
    assert distance_km(GeoPoint(10, 10), GeoPoint(10, 10.000001)) > 0


def test_square_centroid():
    sq = GeoPolygon.from_coords([(0, 0), (0, 1), (1, 1), (1, 0)])
    c = polygon_centroid(sq)
    assert c.lat == pytest.approx(0.5, abs=1e-9)
    assert c.lon == pytest.approx(0.5, abs=1e-9)


def test_triangle_centroid():
    c = polygon_centroid(GeoPolygon.from_coords([(0, 0), (0, 3), (3, 0)]))
    assert (c.lat, c.lon) == pytest.approx((1.0, 1.0), abs=1e-9)


def test_collinear_ring_degenerate():
    with pytest.raises(DegeneratePolygon):
        polygon_centroid(GeoPolygon.from_coords([(0, 0), (0, 1), (0, 2)]))


def test_ring_rules():
    with pytest.raises(ValueError):
        GeoPolygon((GeoPoint(0, 0), GeoPoint(0, 1)))
    with pytest.raises(ValueError):
        GeoPolygon((GeoPoint(0, 0), GeoPoint(0, 1), GeoPoint(1, 1), GeoPoint(0, 0)))
    # explicit closing vertex is dropped by from_coords
    assert len(GeoPolygon.from_coords([(0, 0), (0, 1), (1, 1), (0, 0)]).ring) == 3


@settings(max_examples=60)
@given(
    st.floats(-60, 60),
    st.floats(-170, 170),
    st.floats(0.001, 0.5),
    st.integers(3, 12),
    st.floats(0, 2 * math.pi),
)
def test_convex_centroid_inside(lat0, lon0, r, n, phase):
    # regular n-gon is convex
    ring = [(lat0 + r * math.sin(phase + 2 * math.pi * i / n), lon0 + r * math.cos(phase + 2 * math.pi * i / n)) for i in range(n)]
    poly = GeoPolygon.from_coords(ring)
    assert point_in_polygon(polygon_centroid(poly), poly)


def test_orientation_independent():
    cw = GeoPolygon.from_coords([(0, 0), (0, 2), (1, 2), (1, 0)])
    ccw = GeoPolygon.from_coords([(1, 0), (1, 2), (0, 2), (0, 0)])
    a, b = polygon_centroid(cw), polygon_centroid(ccw)
    assert a.lat == pytest.approx(b.lat) and a.lon == pytest.approx(b.lon)
