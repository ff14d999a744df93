"""
Geodesic primitives (great-circle distances, ground-distance bounding boxes)
and a KD-tree spatial index over points on the sphere.
"""

import math
import logging
from dataclasses import dataclass

import numpy as np
from scipy import spatial

from . import utils
from .utils import BaseClass


logger = logging.getLogger('Geo')

# IUGG mean Earth radius
EARTH_RADIUS_KM = 6371.0088
# local equirectangular conversion
KM_PER_DEGREE = 111.32


class EmptyIndexError(ValueError):

    """Error raised when querying nearest neighbor in an empty :class:`SpatialIndex`."""


class NonPositiveRadiusError(ValueError):

    """Error raised when a query radius is not strictly positive."""


@dataclass(frozen=True)
class GeoPoint:
    """WGS-84 location: latitude in [-90, 90] and longitude in [-180, 180] degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError('coordinates must be finite, found ({}, {})'.format(lat, lon))
        if not -90. <= lat <= 90.:
            raise ValueError('latitude must be in [-90, 90], found {}'.format(lat))
        if not -180. <= lon <= 180.:
            raise ValueError('longitude must be in [-180, 180], found {}'.format(lon))
        object.__setattr__(self, 'lat', lat)
        object.__setattr__(self, 'lon', lon)

    def __iter__(self):
        return iter((self.lat, self.lon))


def valid_coordinates(lat, lon):
    """Return boolean mask of finite coordinates within bounds."""
    lat, lon = np.asarray(lat, dtype='f8'), np.asarray(lon, dtype='f8')
    with np.errstate(invalid='ignore'):
        return np.isfinite(lat) & np.isfinite(lon) & (np.abs(lat) <= 90.) & (np.abs(lon) <= 180.)


def _latlon(point):
    # GeoPoint or (lat, lon) -> (lat, lon) floats
    if isinstance(point, GeoPoint):
        return point.lat, point.lon
    lat, lon = point
    return float(lat), float(lon)


def haversine(lat1, lon1, lat2, lon2):
    """
    Great-circle distance, vectorized over input arrays.

    Parameters
    ----------
    lat1, lon1 : float, array
        Latitude, longitude of the first point(s) (degree).

    lat2, lon2 : float, array
        Latitude, longitude of the second point(s) (degree).

    Returns
    -------
    distance : float, array
        Distance (km).
    """
    conversion = np.pi / 180.
    lat1, lon1, lat2, lon2 = (np.asarray(x, dtype='f8') * conversion for x in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2.)**2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.)**2
    return 2. * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0., 1.)))


def haversine_km(a, b):
    """Great-circle distance (km) between points ``a`` and ``b`` (:class:`GeoPoint` or (lat, lon))."""
    (lat1, lon1), (lat2, lon2) = _latlon(a), _latlon(b)
    return float(haversine(lat1, lon1, lat2, lon2))


@dataclass(frozen=True)
class BBox:
    """
    Square box of side ``width_km`` (ground distance) around ``center``,
    axis-aligned in latitude / longitude after conversion at the center's latitude.
    """

    center: GeoPoint
    width_km: float

    def __post_init__(self):
        if not isinstance(self.center, GeoPoint):
            object.__setattr__(self, 'center', GeoPoint(*self.center))
        if not self.width_km > 0.:
            raise ValueError('width_km must be > 0, found {}'.format(self.width_km))

    @property
    def half_width_deg(self):
        """Half-width in latitude, longitude (degree)."""
        half = self.width_km / 2.
        dlat = half / KM_PER_DEGREE
        cos = math.cos(math.radians(self.center.lat))
        dlon = half / (KM_PER_DEGREE * cos) if cos > 0. else np.inf
        return dlat, dlon

    def contains(self, lat, lon):
        """Return boolean mask of points inside the box (boundary inclusive)."""
        dlat, dlon = self.half_width_deg
        lat, lon = np.asarray(lat, dtype='f8'), np.asarray(lon, dtype='f8')
        return (np.abs(lat - self.center.lat) <= dlat) & (np.abs(utils.wrap_longitude(lon - self.center.lon)) <= dlon)

    def max_distance_km(self):
        """Upper bound on the ground distance between the center and any point in the box, ``None`` if the box is too large for a bound."""
        dlat, dlon = self.half_width_deg
        if abs(self.center.lat) + dlat >= 89. or dlon >= 90.:
            return None
        clat, clon = self.center.lat, self.center.lon
        lat = clat + np.array([-dlat, -dlat, dlat, dlat, -dlat, dlat, 0., 0.])
        lon = clon + np.array([-dlon, dlon, -dlon, dlon, 0., 0., -dlon, dlon])
        return float(np.max(haversine(clat, clon, lat, lon)))


class SpatialIndex(BaseClass):
    """
    Immutable KD-tree index over (id, location) pairs.
    Points are embedded on the unit sphere, so that chord distance is monotonous in great-circle distance;
    candidates returned by the tree are then filtered with exact :func:`haversine` distances,
    so that query results equal a brute-force linear scan.
    """

    def __init__(self, ids, lat, lon):
        """
        Initialize :class:`SpatialIndex`.

        Parameters
        ----------
        ids : array_like
            Point identifiers.

        lat : array_like
            Latitude (degree).

        lon : array_like
            Longitude (degree).
        """
        self.ids = np.asarray(ids)
        self.lat = np.asarray(lat, dtype='f8').ravel()
        self.lon = np.asarray(lon, dtype='f8').ravel()
        if not (self.ids.size == self.lat.size == self.lon.size):
            raise ValueError('ids, lat, lon must be of same size, found {:d}, {:d}, {:d}'.format(self.ids.size, self.lat.size, self.lon.size))
        if not np.all(valid_coordinates(self.lat, self.lon)):
            raise ValueError('invalid coordinates in spatial index')
        self.ids = self.ids.ravel()
        self._tree = None
        if self.size:
            self._tree = spatial.cKDTree(utils.lonlat_to_cartesian(self.lat, self.lon))

    @classmethod
    def from_points(cls, points):
        """Build index from a list of (id, :class:`GeoPoint`) pairs."""
        ids = [id for id, point in points]
        latlon = np.array([_latlon(point) for id, point in points], dtype='f8').reshape(-1, 2)
        return cls(ids, latlon[:, 0], latlon[:, 1])

    @property
    def size(self):
        """Number of indexed points."""
        return self.ids.size

    def __len__(self):
        return self.size

    def _ball(self, lat, lon, r_km):
        # Superset of indices within r_km, from the tree
        if r_km >= np.pi * EARTH_RADIUS_KM:
            return np.arange(self.size)
        chord = utils.arc_to_chord(r_km, EARTH_RADIUS_KM)
        indices = self._tree.query_ball_point(utils.lonlat_to_cartesian(lat, lon), r=chord * (1. + 1e-9) + 1e-12)
        return np.asarray(indices, dtype='i8')

    def distances(self, q, indices=None):
        """Return great-circle distances (km) from ``q`` to indexed points (or to ``indices`` only)."""
        lat, lon = _latlon(q)
        if indices is None:
            return haversine(lat, lon, self.lat, self.lon)
        return haversine(lat, lon, self.lat[indices], self.lon[indices])

    def nearest_index(self, q):
        """Return (index, distance_km) of the point nearest to ``q``; ties broken by smallest id."""
        if not self.size:
            raise EmptyIndexError('cannot query nearest neighbor in an empty index')
        lat, lon = _latlon(q)
        position = utils.lonlat_to_cartesian(lat, lon)
        chord = self._tree.query(position, k=1)[0]
        candidates = np.asarray(self._tree.query_ball_point(position, r=chord * (1. + 1e-9) + 1e-12), dtype='i8')
        distances = self.distances((lat, lon), candidates)
        mask = distances == distances.min()
        candidates, distance = candidates[mask], distances[mask][0]
        index = min(candidates.tolist(), key=lambda i: self.ids[i])
        return index, float(distance)

    def radius_indices(self, q, r_km):
        """Return sorted indices of points within ``r_km`` (closed ball) of ``q``."""
        if not r_km > 0.:
            raise NonPositiveRadiusError('radius must be > 0, found {}'.format(r_km))
        if not self.size:
            return np.zeros(0, dtype='i8')
        lat, lon = _latlon(q)
        indices = self._ball(lat, lon, r_km)
        indices = indices[self.distances((lat, lon), indices) <= r_km]
        return np.sort(indices)

    def bbox_indices(self, box):
        """Return sorted indices of points inside :class:`BBox` ``box`` (boundary inclusive)."""
        if not self.size:
            return np.zeros(0, dtype='i8')
        max_distance = box.max_distance_km()
        if max_distance is None:
            indices = np.arange(self.size)
        else:
            indices = self._ball(box.center.lat, box.center.lon, max_distance * 1.01 + 1e-9)
        indices = indices[box.contains(self.lat[indices], self.lon[indices])]
        return np.sort(indices)

    def nearest(self, q):
        """Return (id, distance_km) of the point nearest to ``q``; ties broken by smallest id."""
        index, distance = self.nearest_index(q)
        return self.ids[index].item(), distance

    def within_radius(self, q, r_km):
        """Return set of ids within ``r_km`` of ``q``."""
        return set(self.ids[self.radius_indices(q, r_km)].tolist())

    def within_bbox(self, box):
        """Return set of ids inside :class:`BBox` ``box``."""
        return set(self.ids[self.bbox_indices(box)].tolist())


def nearest(index, q):
    """Return (id, distance_km) of the point of :class:`SpatialIndex` ``index`` nearest to ``q``."""
    return index.nearest(q)


def within_radius(index, q, r_km):
    """Return set of ids of :class:`SpatialIndex` ``index`` within ``r_km`` of ``q``."""
    return index.within_radius(q, r_km)


def within_bbox(index, box):
    """Return set of ids of :class:`SpatialIndex` ``index`` inside ``box``."""
    return index.within_bbox(box)
