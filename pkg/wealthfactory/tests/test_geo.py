import numpy as np
import pytest

from wealthfactory import setup_logging
from wealthfactory.geo import (GeoPoint, BBox, SpatialIndex, haversine, haversine_km, nearest, within_radius, within_bbox,
                               EmptyIndexError, NonPositiveRadiusError, EARTH_RADIUS_KM, KM_PER_DEGREE)


def random_points(rng, size, center=(8.5, -11.8), extent=1.):
    lat = center[0] + rng.uniform(-extent, extent, size)
    lon = center[1] + rng.uniform(-extent, extent, size)
    return lat, lon


def test_haversine():
    assert haversine_km((0., 0.), (0., 0.)) == 0.
    a, b = GeoPoint(10., 20.), GeoPoint(30., 40.)
    assert haversine_km(a, b) == haversine_km(b, a)
    assert np.allclose(haversine_km((0., 0.), (0., 1.)), EARTH_RADIUS_KM * np.pi / 180., rtol=0, atol=1e-9)
    assert np.allclose(haversine_km((0., 0.), (0., 1.)), 111.195, atol=1e-3)
    rng = np.random.RandomState(seed=42)
    for i in range(200):
        (lat, lon) = random_points(rng, 3, extent=20.)
        ab, bc, ac = haversine(lat[0], lon[0], lat[1], lon[1]), haversine(lat[1], lon[1], lat[2], lon[2]), haversine(lat[0], lon[0], lat[2], lon[2])
        assert ac <= ab + bc + 1e-9


def test_geopoint():
    GeoPoint(-90., 180.)
    for lat, lon in [(91., 0.), (0., -181.), (np.nan, 0.), (0., np.inf)]:
        with pytest.raises(ValueError):
            GeoPoint(lat, lon)
    with pytest.raises(ValueError):
        BBox(GeoPoint(0., 0.), 0.)


def test_nearest():
    index = SpatialIndex(['A'], [0.], [0.])
    id, distance = nearest(index, GeoPoint(0., 0.01))
    assert id == 'A' and np.allclose(distance, 1.112, atol=1e-3)
    assert nearest(index, (0., 0.)) == ('A', 0.)
    index = SpatialIndex(['B', 'A'], [0., 0.], [0.01, -0.01])
    assert nearest(index, (0., 0.))[0] == 'A'
    with pytest.raises(EmptyIndexError):
        nearest(SpatialIndex([], [], []), (0., 0.))


def test_within_radius():
    index = SpatialIndex(['A'], [0.], [0.01])
    distance = haversine_km((0., 0.), (0., 0.01))
    assert within_radius(index, (0., 0.), distance * (1. - 1e-6)) == set()
    assert within_radius(index, (0., 0.), distance) == {'A'}
    with pytest.raises(NonPositiveRadiusError):
        within_radius(index, (0., 0.), 0.)
    assert within_radius(SpatialIndex([], [], []), (0., 0.), 1.) == set()


def test_within_bbox():
    center = GeoPoint(8.5, -11.8)
    north = center.lat + 1. / KM_PER_DEGREE
    index = SpatialIndex([0, 1], [center.lat, north], [center.lon, center.lon])
    box = BBox(center, 1.6)
    assert within_bbox(index, box) == {0}
    assert within_bbox(index, BBox(center, 2.2)) == {0, 1}
    # across the antimeridian
    index = SpatialIndex([0, 1], [0., 0.], [179.999, -179.999])
    assert within_bbox(index, BBox(GeoPoint(0., 180.), 1.)) == {0, 1}


def test_brute_force():
    rng = np.random.RandomState(seed=42)
    for size in [1, 10, 1000, 10000]:
        lat, lon = random_points(rng, size)
        ids = np.arange(size)
        index = SpatialIndex(ids, lat, lon)
        qlat, qlon = random_points(rng, 100, extent=1.2)
        for q in zip(qlat, qlon):
            distances = haversine(q[0], q[1], lat, lon)
            ref = ids[distances == distances.min()].min()
            id, distance = nearest(index, q)
            assert id == ref and np.allclose(distance, distances.min(), rtol=0, atol=1e-9)
            for r_km in [1.6, 5.]:
                assert within_radius(index, q, r_km) == set(ids[distances <= r_km].tolist())
            box = BBox(GeoPoint(*q), 1.6)
            assert within_bbox(index, box) == set(ids[box.contains(lat, lon)].tolist())


def test_determinism():
    rng = np.random.RandomState(seed=42)
    lat, lon = random_points(rng, 500)
    results = []
    for i in range(2):
        index = SpatialIndex(np.arange(lat.size), lat, lon)
        results.append([sorted(index.within_radius((8.5, -11.8), 10.)), index.nearest((8.4, -11.9))])
    assert results[0] == results[1]


if __name__ == '__main__':

    setup_logging()
    test_haversine()
    test_geopoint()
    test_nearest()
    test_within_radius()
    test_within_bbox()
    test_brute_force()
    test_determinism()
