"""
Feature extraction for clusters and populated places:
173 metadata features (population, mobility, demographics, infrastructure, connectivity, nightlight, settlement),
plus optional precomputed image embeddings.
Missing values are NaN, never 0.
"""

import os
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse

from mpytools import CurrentMPIComm

from . import utils
from .geo import SpatialIndex, BBox, GeoPoint, haversine, EARTH_RADIUS_KM
from .ingest import settlement_of_kind, EMBEDDING_COLUMNS, DEFAULT_DEMOGRAPHICS_COLUMNS, DEFAULT_POI_CATEGORIES
from .utils import BaseClass


logger = logging.getLogger('Features')


SOURCES = ('population', 'mobility', 'demographics', 'infrastructure', 'connectivity', 'nightlight', 'settlement', 'embedding')
METADATA_SOURCES = SOURCES[:-1]
SOURCE_SIZES = {'population': 9, 'mobility': 27, 'demographics': 37, 'infrastructure': 54, 'connectivity': 9, 'nightlight': 36, 'settlement': 1}
N_METADATA_FEATURES = sum(SOURCE_SIZES.values())
MOBILITY_METRICS = ('people_flow_in', 'people_flow_out', 'in_degree', 'out_degree', 'pagerank', 'weighted_pagerank')
NIGHTLIGHT_STATS = ('min', 'max', 'mean', 'median', 'frac_pixels', 'frac_area', 'frac_sum_rad', 't30_mean', 'l30_mean')
ROAD_FEATURES = ('distance', 'count', 'length', 'intersections')


class UnknownTileError(KeyError):

    """Error raised when a movement edge references an unknown tile."""


class ColumnCountMismatchError(ValueError):

    """Error raised when a keyed layer does not have the expected number of columns."""


@dataclass(frozen=True)
class FeatureConfig:
    """Feature extraction settings."""

    radii_km: tuple = (1.6, 2., 5., 10.)
    beta_pop: tuple = (1., 1.5, 2.)
    beta_mob: tuple = (None, 1., 1.5, 2.)
    nightlight_threshold: float = 10.
    pagerank_damping: float = 0.85
    pagerank_tol: float = 1e-10
    pagerank_max_iter: int = 10000
    bbox_width_km: float = 1.6
    distance_floor_m: float = 1.

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii_km)
        if not all(r > 0. for r in radii) or list(radii) != sorted(set(radii)):
            raise ValueError('radii_km must be positive and strictly ascending, found {}'.format(self.radii_km))
        object.__setattr__(self, 'radii_km', radii)
        for name in ['beta_pop', 'beta_mob']:
            betas = tuple(None if beta is None else float(beta) for beta in getattr(self, name))
            if not all(beta is None or beta > 0. for beta in betas):
                raise ValueError('{} must be positive, found {}'.format(name, betas))
            object.__setattr__(self, name, betas)
        if not 0. < self.pagerank_damping < 1.:
            raise ValueError('pagerank_damping must be in (0, 1), found {}'.format(self.pagerank_damping))
        if not self.bbox_width_km > 0. or not self.distance_floor_m > 0.:
            raise ValueError('bbox_width_km and distance_floor_m must be > 0')


def _fmt(value):
    return '{:g}'.format(value)


def feature_names(cfg=None, demographics_columns=None, poi_categories=None, embeddings=False):
    """
    Return canonical feature names and source of each feature.

    Parameters
    ----------
    cfg : FeatureConfig, default=None
        Feature settings.

    demographics_columns : list, default=None
        Names of the demographics columns, defaults to :data:`ingest.DEFAULT_DEMOGRAPHICS_COLUMNS`.

    poi_categories : list, default=None
        Names of the POI categories, defaults to :data:`ingest.DEFAULT_POI_CATEGORIES`.

    embeddings : bool, default=False
        Whether to append the 784 embedding columns.

    Returns
    -------
    names : list
    sources : list
    """
    cfg = cfg or FeatureConfig()
    if demographics_columns is None: demographics_columns = DEFAULT_DEMOGRAPHICS_COLUMNS
    if poi_categories is None: poi_categories = DEFAULT_POI_CATEGORIES
    names = {}
    names['population'] = ['pop_distance_to_closest_tile', 'pop_population_in_closest_tile']\
                          + ['pop_total_population_within_{}km'.format(_fmt(r)) for r in cfg.radii_km]\
                          + ['pop_gravitational_closest_tile_b{}'.format(_fmt(beta)) for beta in cfg.beta_pop]
    names['mobility'] = ['mob_distance_to_closest_tile', 'mob_average_distance_in', 'mob_average_distance_out']
    for metric in MOBILITY_METRICS:
        names['mobility'] += ['mob_{}'.format(metric) if beta is None else 'mob_{}_b{}'.format(metric, _fmt(beta)) for beta in cfg.beta_mob]
    names['demographics'] = ['dem_{}'.format(column) for column in demographics_columns]
    names['infrastructure'] = []
    for category in poi_categories:
        names['infrastructure'] += ['inf_{}_count'.format(category), 'inf_{}_distance'.format(category)]
    names['infrastructure'] += ['inf_buildings_count', 'inf_buildings_distance'] + ['inf_roads_{}'.format(name) for name in ROAD_FEATURES]
    names['connectivity'] = ['con_distance_to_closest_cell'] + ['con_cells_within_{}km'.format(_fmt(r)) for r in cfg.radii_km]\
                            + ['con_towers_within_{}km'.format(_fmt(r)) for r in cfg.radii_km]
    names['nightlight'] = ['ntl_{}_{}km'.format(stat, _fmt(r)) for r in cfg.radii_km for stat in NIGHTLIGHT_STATS]
    names['settlement'] = ['settlement_urban']
    if embeddings:
        names['embedding'] = list(EMBEDDING_COLUMNS)
    toret, sources = [], []
    for source, source_names in names.items():
        toret += source_names
        sources += [source] * len(source_names)
    return toret, sources


def _gravitational(value, distance_km, betas, cfg):
    # value / distance^beta, distance in meters floored; beta None -> raw value
    distance_m = max(distance_km * 1e3, cfg.distance_floor_m)
    return [value if beta is None else value / distance_m**beta for beta in betas]


def population_features(loc, tiles_index, populations, cfg=None):
    """
    Population features of location ``loc``: distance to closest tile (km), population in closest tile,
    total population within each radius, and gravitational features population / distance^beta (distance in meters).

    Parameters
    ----------
    loc : GeoPoint, tuple
        Location (lat, lon).

    tiles_index : SpatialIndex
        Index of population tiles, ids being positions in ``populations``.

    populations : array
        Population of each tile.

    cfg : FeatureConfig, default=None
        Feature settings.

    Returns
    -------
    values : list
        9 values, NaN if there is no tile.
    """
    cfg = cfg or FeatureConfig()
    size = 2 + len(cfg.radii_km) + len(cfg.beta_pop)
    if tiles_index is None or not tiles_index.size:
        return [np.nan] * size
    index, distance = tiles_index.nearest_index(loc)
    closest = float(populations[tiles_index.ids[index]])
    totals = [float(np.sum(populations[tiles_index.ids[tiles_index.radius_indices(loc, r)]])) for r in cfg.radii_km]
    return [distance, closest] + totals + _gravitational(closest, distance, cfg.beta_pop, cfg)


class MobilityGraph(BaseClass):
    """
    Directed mobility graph: one node per tile, edge weights being summed baseline movement counts.
    Node metrics are computed once and cached.
    """

    def __init__(self, tile_ids, lat, lon, matrix):
        """
        Initialize :class:`MobilityGraph`.

        Parameters
        ----------
        tile_ids : array
            Node identifiers.

        lat, lon : array
            Node coordinates (degree).

        matrix : scipy.sparse matrix of shape (n, n)
            Weights, ``matrix[i, j]`` being the movement count from node ``i`` to node ``j``.
        """
        self.tile_ids = np.asarray(tile_ids)
        self.lat, self.lon = np.asarray(lat, dtype='f8'), np.asarray(lon, dtype='f8')
        self.matrix = sparse.csr_matrix(matrix, dtype='f8')
        self.index = SpatialIndex(np.arange(self.size), self.lat, self.lon)
        self._metrics = {}

    @property
    def size(self):
        """Number of nodes."""
        return self.tile_ids.size

    @property
    def nedges(self):
        """Number of (aggregated) edges."""
        return self.matrix.nnz

    def metric(self, name, cfg=None):
        """Return node metric ``name``, one of :data:`MOBILITY_METRICS`, 'average_distance_in' or 'average_distance_out'."""
        if name not in self._metrics:
            cfg = cfg or FeatureConfig()
            if name in ['pagerank', 'weighted_pagerank']:
                self._metrics[name] = pagerank(self, weighted=name == 'weighted_pagerank', damping=cfg.pagerank_damping,
                                               tol=cfg.pagerank_tol, max_iter=cfg.pagerank_max_iter)
            else:
                self._compute_local_metrics()
        return self._metrics[name]

    def _compute_local_metrics(self):
        matrix = self.matrix
        adjacency = (matrix > 0).astype('f8')
        self._metrics['people_flow_in'] = np.asarray(matrix.sum(axis=0)).ravel()
        self._metrics['people_flow_out'] = np.asarray(matrix.sum(axis=1)).ravel()
        self._metrics['in_degree'] = np.asarray(adjacency.sum(axis=0)).ravel()
        self._metrics['out_degree'] = np.asarray(adjacency.sum(axis=1)).ravel()
        coo = matrix.tocoo()
        mask = coo.row != coo.col
        row, col = coo.row[mask], coo.col[mask]
        length = haversine(self.lat[row], self.lon[row], self.lat[col], self.lon[col])
        for name, node in [('average_distance_in', col), ('average_distance_out', row)]:
            count = np.bincount(node, minlength=self.size)
            total = np.bincount(node, weights=length, minlength=self.size)
            with np.errstate(invalid='ignore', divide='ignore'):
                self._metrics[name] = np.where(count > 0, total / np.maximum(count, 1), np.nan)


def build_mobility_graph(movement_edges, tiles):
    """
    Build :class:`MobilityGraph` from movement edges and tiles.

    Parameters
    ----------
    movement_edges : pandas.DataFrame
        With columns tile_from, tile_to, count. Parallel records are summed.

    tiles : pandas.DataFrame
        With columns tile_id, lat, lon.

    Returns
    -------
    graph : MobilityGraph
    """
    tile_ids = tiles['tile_id'].to_numpy()
    lookup = pd.Series(np.arange(len(tile_ids)), index=tile_ids)
    if movement_edges is None:
        movement_edges = pd.DataFrame({'tile_from': [], 'tile_to': [], 'count': []})
    for column in ['tile_from', 'tile_to']:
        unknown = ~movement_edges[column].isin(tile_ids)
        if unknown.any():
            raise UnknownTileError('unknown tile(s) {} in {}'.format(sorted(set(movement_edges[column][unknown]))[:10], column))
    aggregated = movement_edges.groupby(['tile_from', 'tile_to'], sort=True)['count'].sum().reset_index()
    row = lookup.loc[aggregated['tile_from']].to_numpy() if len(aggregated) else np.zeros(0, dtype='i8')
    col = lookup.loc[aggregated['tile_to']].to_numpy() if len(aggregated) else np.zeros(0, dtype='i8')
    matrix = sparse.coo_matrix((aggregated['count'].to_numpy(dtype='f8'), (row, col)), shape=(len(tile_ids),) * 2)
    graph = MobilityGraph(tile_ids, tiles['lat'], tiles['lon'], matrix)
    logger.info('Mobility graph with {:d} nodes and {:d} edges.'.format(graph.size, graph.nedges))
    return graph


def pagerank(g, weighted=True, damping=0.85, tol=1e-10, max_iter=10000):
    """
    PageRank of :class:`MobilityGraph` ``g`` by power iteration.
    The mass of dangling nodes (without outgoing edge) is redistributed uniformly.

    Parameters
    ----------
    weighted : bool, default=True
        If ``True``, transition probabilities are proportional to edge weights, else uniform over outgoing edges.

    damping : float, default=0.85
        Damping factor.

    tol : float, default=1e-10
        Stop when the L1 change of scores is below ``tol``.

    max_iter : int, default=10000
        Maximum number of iterations.

    Returns
    -------
    scores : array
        Scores summing to 1.
    """
    n = g.size
    if not n:
        return np.zeros(0, dtype='f8')
    matrix = g.matrix if weighted else (g.matrix > 0).astype('f8')
    out = np.asarray(matrix.sum(axis=1)).ravel()
    dangling = out <= 0.
    transition = sparse.diags(np.where(dangling, 0., 1. / np.where(dangling, 1., out))).dot(matrix).T.tocsr()
    scores = np.full(n, 1. / n, dtype='f8')
    for iteration in range(max_iter):
        new = damping * (transition.dot(scores) + scores[dangling].sum() / n) + (1. - damping) / n
        delta = np.abs(new - scores).sum()
        scores = new
        if delta < tol:
            break
    else:
        logger.warning('PageRank did not converge in {:d} iterations.'.format(max_iter))
    return scores / scores.sum()


def mobility_features(loc, g, cfg=None):
    """
    Mobility features of location ``loc``: distance to closest tile (km), average length of its incoming and outgoing edges (km),
    then for each metric of :data:`MOBILITY_METRICS`, the raw metric of the closest tile and metric / distance^beta (distance in meters).

    Returns
    -------
    values : list
        27 values; all NaN without tiles, all but the distance NaN without edges.
    """
    cfg = cfg or FeatureConfig()
    size = 3 + len(MOBILITY_METRICS) * len(cfg.beta_mob)
    if g is None or not g.size:
        return [np.nan] * size
    index, distance = g.index.nearest_index(loc)
    if not g.nedges:
        return [distance] + [np.nan] * (size - 1)
    toret = [distance, g.metric('average_distance_in')[index], g.metric('average_distance_out')[index]]
    for name in MOBILITY_METRICS:
        toret += _gravitational(float(g.metric(name, cfg=cfg)[index]), distance, cfg.beta_mob, cfg)
    return [float(value) for value in toret]


class KeyedLayer(BaseClass):
    """Layer of per-location rows (demographics, embeddings), looked up by location_id."""

    def __init__(self, table, columns, expected=None, name='layer'):
        columns = list(columns)
        if expected is not None and len(columns) != expected:
            raise ColumnCountMismatchError('{} must have {:d} columns, found {:d}'.format(name, expected, len(columns)))
        self.columns = columns
        self.name = name
        self._rows = {}
        if table is not None:
            missing = [column for column in columns if column not in table.columns]
            if missing:
                raise ColumnCountMismatchError('{} is missing column(s) {}'.format(name, missing[:10]))
            table = table.drop_duplicates('location_id', keep='first')
            values = table[columns].to_numpy(dtype='f8')
            self._rows = dict(zip(table['location_id'].tolist(), values))

    def lookup(self, *location_ids):
        """Return row of the first of ``location_ids`` present, else NaN row."""
        for location_id in location_ids:
            if location_id is not None and location_id in self._rows:
                return self._rows[location_id]
        return np.full(len(self.columns), np.nan)


def demographics_features(location_id, demographics_table, columns=None, fallback_id=None):
    """
    Demographics features of location ``location_id``: the 37 columns of its row, NaN if absent.

    Parameters
    ----------
    location_id : str
        Location identifier.

    demographics_table : pandas.DataFrame, KeyedLayer
        Demographics layer.

    columns : list, default=None
        Demographics columns; defaults to all columns but location_id.

    fallback_id : str, default=None
        Identifier to look up if ``location_id`` is absent.

    Returns
    -------
    values : list
        37 values.
    """
    if not isinstance(demographics_table, KeyedLayer):
        if columns is None:
            columns = [column for column in demographics_table.columns if column != 'location_id']
        demographics_table = KeyedLayer(demographics_table, columns, expected=SOURCE_SIZES['demographics'], name='demographics')
    return demographics_table.lookup(location_id, fallback_id).tolist()


class RoadLayer(BaseClass):
    """Road segments, indexed by midpoints, and their intersections."""

    def __init__(self, segments=None):
        if segments is None:
            segments = pd.DataFrame({name: [] for name in ['lat_from', 'lon_from', 'lat_to', 'lon_to']})
        self.start = segments[['lat_from', 'lon_from']].to_numpy(dtype='f8').reshape(-1, 2)
        self.end = segments[['lat_to', 'lon_to']].to_numpy(dtype='f8').reshape(-1, 2)
        self.lengths = haversine(self.start[:, 0], self.start[:, 1], self.end[:, 0], self.end[:, 1])
        position = utils.lonlat_to_cartesian(self.start[:, 0], self.start[:, 1]) + utils.lonlat_to_cartesian(self.end[:, 0], self.end[:, 1])
        norm = np.sqrt(np.sum(position**2, axis=-1))
        norm[norm == 0.] = 1.
        position = position / norm[:, None]
        mid_lat = np.degrees(np.arcsin(np.clip(position[:, 2], -1., 1.)))
        mid_lon = np.degrees(np.arctan2(position[:, 1], position[:, 0]))
        self.midpoints = SpatialIndex(np.arange(len(self.lengths)), mid_lat, mid_lon)
        self.max_half_length = np.max(self.lengths, initial=0.) / 2.
        # endpoints shared by >= 3 segment ends
        ends = np.round(np.concatenate([self.start, self.end], axis=0), 6)
        unique, counts = np.unique(ends, axis=0, return_counts=True) if len(ends) else (np.zeros((0, 2)), np.zeros(0, dtype='i8'))
        unique = unique[counts >= 3]
        self.intersections = SpatialIndex(np.arange(len(unique)), unique[:, 0], unique[:, 1])

    @property
    def size(self):
        return self.lengths.size

    def distance(self, loc):
        """Distance (km) from ``loc`` to the closest segment, NaN without segments."""
        if not self.size:
            return np.nan
        lat, lon = loc
        index, distance = self.midpoints.nearest_index(loc)
        candidates = self.midpoints.radius_indices(loc, distance + self.max_half_length + 1e-9)
        # local equirectangular frame around loc
        cos = np.cos(np.radians(lat))

        def project(points):
            return np.column_stack([np.radians(utils.wrap_longitude(points[:, 1] - lon)) * cos, np.radians(points[:, 0] - lat)]) * EARTH_RADIUS_KM

        a, b = project(self.start[candidates]), project(self.end[candidates])
        ab = b - a
        norm2 = np.sum(ab**2, axis=-1)
        t = np.clip(np.where(norm2 > 0., -np.sum(a * ab, axis=-1) / np.where(norm2 > 0., norm2, 1.), 0.), 0., 1.)
        closest = a + t[:, None] * ab
        return float(np.min(np.sqrt(np.sum(closest**2, axis=-1))))


def infrastructure_features(loc, poi_indices, road_layer, building_index, cfg=None):
    """
    Infrastructure features of location ``loc``: per POI category, number of instances in the bounding box and distance (km)
    to the closest instance; number of buildings in the bounding box and distance to the closest one;
    distance to the closest road segment, number of segments, total length (km) and number of intersections in the bounding box.

    Parameters
    ----------
    loc : GeoPoint, tuple
        Location (lat, lon).

    poi_indices : dict
        POI category -> :class:`SpatialIndex` (possibly empty), in canonical category order.

    road_layer : RoadLayer
        Road segments.

    building_index : SpatialIndex
        Buildings.

    cfg : FeatureConfig, default=None
        Feature settings.

    Returns
    -------
    values : list
    """
    cfg = cfg or FeatureConfig()
    box = BBox(loc if isinstance(loc, GeoPoint) else GeoPoint(*loc), cfg.bbox_width_km)
    toret = []

    def count_distance(index):
        if index is None or not index.size:
            return [0., np.nan]
        return [float(index.bbox_indices(box).size), index.nearest_index(loc)[1]]

    for index in poi_indices.values():
        toret += count_distance(index)
    toret += count_distance(building_index)
    if road_layer is None or not road_layer.size:
        return toret + [np.nan, 0., 0., 0.]
    inside = road_layer.midpoints.bbox_indices(box)
    toret += [road_layer.distance(loc), float(inside.size), float(road_layer.lengths[inside].sum()),
              float(road_layer.intersections.bbox_indices(box).size)]
    return toret


def connectivity_features(loc, cell_index, tower_ids, cfg=None):
    """
    Connectivity features of location ``loc``: distance (km) to the closest cell, number of cells
    and number of distinct towers within each radius.

    Returns
    -------
    values : list
        9 values; distance NaN and counts 0 without cells.
    """
    cfg = cfg or FeatureConfig()
    if cell_index is None or not cell_index.size:
        return [np.nan] + [0.] * (2 * len(cfg.radii_km))
    distance = cell_index.nearest_index(loc)[1]
    cells, towers = [], []
    for r in cfg.radii_km:
        indices = cell_index.radius_indices(loc, r)
        cells.append(float(indices.size))
        towers.append(float(np.unique(tower_ids[indices]).size))
    return [distance] + cells + towers


def nightlight_features(loc, pixel_index, radiance, cfg=None):
    """
    Nightlight features of location ``loc``: per radius, min, max, mean, median of pixel radiance within the disc,
    fraction of pixels (and of area, pixels being equal-area) with radiance above threshold,
    fraction of radiance carried by these pixels, and mean of the top and lowest 30% pixels.

    Returns
    -------
    values : list
        36 values; 9 NaN for each radius without pixel.
    """
    cfg = cfg or FeatureConfig()
    toret = []
    for r in cfg.radii_km:
        if pixel_index is None or not pixel_index.size:
            toret += [np.nan] * len(NIGHTLIGHT_STATS)
            continue
        values = np.sort(radiance[pixel_index.radius_indices(loc, r)])
        n = values.size
        if not n:
            toret += [np.nan] * len(NIGHTLIGHT_STATS)
            continue
        above = values >= cfg.nightlight_threshold
        frac_pixels = above.mean()
        total = values.sum()
        frac_sum_rad = values[above].sum() / total if total > 0. else 0.
        # ceil(0.3 n)
        k = (3 * n + 9) // 10
        toret += [values[0], values[-1], values.mean(), np.median(values), frac_pixels, frac_pixels, frac_sum_rad,
                  values[-k:].mean(), values[:k].mean()]
    return [float(value) for value in toret]


@dataclass
class LocationSet:
    """
    Locations to featurize.

    Attributes
    ----------
    ids : array
        Location identifiers (cluster_id or place_id).

    lat, lon : array
        Coordinates (degree).

    year : array
        Year of each location, selecting the nightlight pixels.

    settlement : array
        'urban' or 'rural'.

    keys : array, default=None
        Identifiers to look up keyed layers (demographics, embeddings), defaults to ``ids``.

    fallback_keys : array, default=None
        Identifiers looked up when ``keys`` are absent from keyed layers.
    """
    ids: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    year: np.ndarray
    settlement: np.ndarray
    keys: np.ndarray = None
    fallback_keys: np.ndarray = field(default=None)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=object)
        self.lat, self.lon = np.asarray(self.lat, dtype='f8'), np.asarray(self.lon, dtype='f8')
        self.year = np.broadcast_to(np.asarray(self.year, dtype='i8'), self.ids.shape).copy()
        self.settlement = np.asarray(self.settlement, dtype=object)
        if self.keys is None: self.keys = self.ids
        self.keys = np.asarray(self.keys, dtype=object)
        if self.fallback_keys is not None:
            self.fallback_keys = np.asarray(self.fallback_keys, dtype=object)

    def __len__(self):
        return self.ids.size

    @classmethod
    def from_clusters(cls, clusters):
        """
        Locations of clusters (or cluster statistics); if relocated (see :meth:`groundtruth.RelocationPlan.apply`),
        keyed layers are looked up with the assigned place first, then the cluster itself.
        """
        keys = clusters['location_id'].to_numpy() if 'location_id' in clusters else None
        fallback_keys = clusters['cluster_id'].to_numpy() if keys is not None else None
        return cls(clusters['cluster_id'].to_numpy(), clusters['lat'].to_numpy(), clusters['lon'].to_numpy(),
                   clusters['year'].to_numpy(), clusters['settlement'].to_numpy(), keys=keys, fallback_keys=fallback_keys)

    @classmethod
    def from_places(cls, places, year):
        """Locations of populated places, all at ``year``."""
        return cls(places['place_id'].to_numpy(), places['lat'].to_numpy(), places['lon'].to_numpy(),
                   year, settlement_of_kind(places['kind'].to_numpy()))


class FeatureMatrix(BaseClass):
    """
    Per-location feature vectors, with feature names, source of each feature, year of each location;
    missing values are NaN.
    """

    def __init__(self, location_ids, values, names, sources, years):
        """
        Initialize :class:`FeatureMatrix`.

        Parameters
        ----------
        location_ids : array
            Location identifiers.

        values : array of shape (n_locations, n_features)
            Feature values, NaN if missing.

        names : list
            Feature names.

        sources : list
            Source of each feature, one of :data:`SOURCES`.

        years : array
            Year of each location.
        """
        self.location_ids = np.asarray(location_ids, dtype=object)
        self.values = np.asarray(values, dtype='f8').reshape(self.location_ids.size, len(names))
        self.names = list(names)
        self.sources = list(sources)
        self.years = np.broadcast_to(np.asarray(years, dtype='i8'), self.location_ids.shape).copy()
        if len(self.sources) != len(self.names):
            raise ValueError('names and sources must have same length')

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]

    @property
    def missing(self):
        """Boolean mask of missing values."""
        return np.isnan(self.values)

    def source_counts(self):
        """Return number of features per source."""
        return {source: self.sources.count(source) for source in SOURCES if source in self.sources}

    def select_sources(self, sources):
        """Return matrix restricted to features of ``sources``."""
        sources = _parse_sources(sources)
        mask = np.isin(self.sources, sources)
        return self.__class__(self.location_ids, self.values[:, mask], [name for name, m in zip(self.names, mask) if m],
                              [source for source, m in zip(self.sources, mask) if m], self.years)

    def mask_sources(self, keep_sources):
        """Return copy with features outside ``keep_sources`` set missing."""
        keep_sources = _parse_sources(keep_sources)
        values = self.values.copy()
        values[:, ~np.isin(self.sources, keep_sources)] = np.nan
        return self.__class__(self.location_ids, values, self.names, self.sources, self.years)

    def take(self, indices):
        """Return matrix restricted to rows ``indices`` (integer array or boolean mask)."""
        return self.__class__(self.location_ids[indices], self.values[indices], self.names, self.sources, self.years[indices])

    def loc(self, location_ids):
        """Return matrix of rows of ``location_ids``."""
        lookup = {location_id: index for index, location_id in enumerate(self.location_ids.tolist())}
        return self.take(np.array([lookup[location_id] for location_id in location_ids], dtype='i8'))

    def to_frame(self):
        """Return :class:`pandas.DataFrame` with columns location_id, year and features."""
        frame = pd.DataFrame(self.values, columns=self.names)
        frame.insert(0, 'year', self.years)
        frame.insert(0, 'location_id', self.location_ids.astype(str))
        return frame

    def to_csv(self, filename):
        """Write matrix to CSV ``filename`` (missing as empty field) and column manifest to ``filename`` + '.manifest.json'."""
        dirname = os.path.dirname(filename)
        if dirname: utils.mkdir(dirname)
        self.to_frame().to_csv(filename, index=False, na_rep='')
        columns = [{'name': name, 'source': source, 'standardized_per_year': source == 'nightlight'} for name, source in zip(self.names, self.sources)]
        utils.write_json(filename + '.manifest.json', {'columns': columns, 'missing': ''})

    @classmethod
    def from_csv(cls, filename):
        """Read matrix written by :meth:`to_csv`."""
        manifest = utils.read_json(filename + '.manifest.json')
        names = [column['name'] for column in manifest['columns']]
        frame = pd.read_csv(filename, dtype={'location_id': str}, keep_default_na=False, na_values={name: [''] for name in names},
                            float_precision='round_trip')
        return cls(frame['location_id'].to_numpy(), frame[names].to_numpy(dtype='f8'), names,
                   [column['source'] for column in manifest['columns']], frame['year'].to_numpy())


def _parse_sources(sources):
    if isinstance(sources, str):
        sources = [sources]
    sources = list(sources)
    unknown = [source for source in sources if source not in SOURCES]
    if unknown:
        raise ValueError('unknown source(s) {}, choices are {}'.format(unknown, SOURCES))
    return sources


class FeatureExtractor(BaseClass):
    """Spatial indices and graph of a :class:`ingest.DatasetBundle`, built once and queried per location."""

    def __init__(self, bundle, cfg=None):
        self.cfg = cfg = cfg or FeatureConfig()
        self.bundle = bundle
        self.tiles_index, self.populations = None, None
        if bundle.has('population_tiles'):
            tiles = bundle.population_tiles
            self.tiles_index = SpatialIndex(np.arange(len(tiles)), tiles['lat'], tiles['lon'])
            self.populations = tiles['population'].to_numpy(dtype='f8')
        self.graph = None
        if bundle.has('movement_tiles'):
            self.graph = build_mobility_graph(bundle.movement_edges, bundle.movement_tiles)
            if self.graph.nedges:
                for name in MOBILITY_METRICS:
                    self.graph.metric(name, cfg=cfg)
        self.demographics = KeyedLayer(bundle.demographics, bundle.demographics_columns, expected=SOURCE_SIZES['demographics'], name='demographics')
        self.poi_indices = {}
        pois = bundle.poi_points
        for category in bundle.poi_categories:
            if pois is None:
                self.poi_indices[category] = None
                continue
            mask = (pois['category'] == category).to_numpy()
            self.poi_indices[category] = SpatialIndex(np.flatnonzero(mask), pois['lat'].to_numpy()[mask], pois['lon'].to_numpy()[mask])
        self.road_layer = RoadLayer(bundle.road_segments) if bundle.has('road_segments') else None
        self.building_index = None
        if bundle.has('building_points'):
            buildings = bundle.building_points
            self.building_index = SpatialIndex(np.arange(len(buildings)), buildings['lat'], buildings['lon'])
        self.cell_index, self.tower_ids = None, None
        if bundle.has('cells'):
            cells = bundle.cells
            self.cell_index = SpatialIndex(np.arange(len(cells)), cells['lat'], cells['lon'])
            self.tower_ids = cells['tower_id'].to_numpy()
        self.pixels = {}
        for year in bundle.nightlight_years:
            pixels = bundle.nightlight[year]
            self.pixels[year] = (SpatialIndex(np.arange(len(pixels)), pixels['lat'], pixels['lon']), pixels['radiance'].to_numpy(dtype='f8'))
        self.embeddings = None
        if bundle.has('embeddings'):
            self.embeddings = KeyedLayer(bundle.embeddings, EMBEDDING_COLUMNS, name='embeddings')

    def names(self, embeddings=False):
        """Canonical feature names and sources."""
        return feature_names(self.cfg, demographics_columns=self.bundle.demographics_columns,
                             poi_categories=self.bundle.poi_categories, embeddings=embeddings)

    def extract(self, location_id, lat, lon, year, settlement, key=None, fallback_key=None, embeddings=False):
        """Return feature vector of one location."""
        cfg, loc = self.cfg, GeoPoint(lat, lon)
        key = location_id if key is None else key
        toret = population_features(loc, self.tiles_index, self.populations, cfg=cfg)
        toret += mobility_features(loc, self.graph, cfg=cfg)
        toret += demographics_features(key, self.demographics, fallback_id=fallback_key)
        toret += infrastructure_features(loc, self.poi_indices, self.road_layer, self.building_index, cfg=cfg)
        toret += connectivity_features(loc, self.cell_index, self.tower_ids, cfg=cfg)
        nightlight_year = self.bundle.nightlight_year(int(year))
        pixel_index, radiance = self.pixels.get(nightlight_year, (None, None))
        toret += nightlight_features(loc, pixel_index, radiance, cfg=cfg)
        toret.append(1. if settlement == 'urban' else 0.)
        if embeddings:
            toret += self.embeddings.lookup(key, fallback_key).tolist()
        return toret


@CurrentMPIComm.enable
def assemble(loc_set, bundle, cfg=None, embeddings=None, extractor=None, mpicomm=None):
    """
    Compute the feature matrix of locations.

    Parameters
    ----------
    loc_set : LocationSet
        Locations.

    bundle : DatasetBundle
        Validated bundle.

    cfg : FeatureConfig, default=None
        Feature settings.

    embeddings : bool, default=None
        Whether to append image embeddings; defaults to ``True`` if the bundle has embeddings.

    extractor : FeatureExtractor, default=None
        Prebuilt extractor for ``bundle``, to share indices between calls.

    mpicomm : MPI communicator, default=None
        Locations are split across ranks, rows gathered back in location order.

    Returns
    -------
    matrix : FeatureMatrix
    """
    extractor = extractor or FeatureExtractor(bundle, cfg=cfg)
    if embeddings is None:
        embeddings = bundle.has('embeddings')
    if embeddings and not bundle.has('embeddings'):
        raise ValueError('embeddings requested but the bundle has no embeddings layer')
    names, sources = extractor.names(embeddings=embeddings)
    size = len(loc_set)
    start, stop = mpicomm.rank * size // mpicomm.size, (mpicomm.rank + 1) * size // mpicomm.size
    rows = []
    for index in range(start, stop):
        fallback_key = None if loc_set.fallback_keys is None else loc_set.fallback_keys[index]
        rows.append(extractor.extract(loc_set.ids[index], loc_set.lat[index], loc_set.lon[index], loc_set.year[index], loc_set.settlement[index],
                                      key=loc_set.keys[index], fallback_key=fallback_key, embeddings=embeddings))
    rows = [row for rank_rows in mpicomm.allgather(rows) for row in rank_rows]
    values = np.array(rows, dtype='f8').reshape(size, len(names))
    if mpicomm.rank == 0:
        logger.info('Computed {:d} features for {:d} locations, {:.1%} missing.'.format(len(names), size, np.isnan(values).mean() if values.size else 0.))
    return FeatureMatrix(loc_set.ids, values, names, sources, loc_set.year)


def standardize_per_year(matrix):
    """
    Return copy of :class:`FeatureMatrix` ``matrix`` with nightlight features z-scored (population standard deviation)
    among locations of the same year; constant columns map to 0, missing values stay missing.
    """
    values = matrix.values.copy()
    columns = np.flatnonzero(np.array(matrix.sources) == 'nightlight')
    for year in np.unique(matrix.years):
        rows = matrix.years == year
        block = values[np.ix_(rows, columns)]
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', RuntimeWarning)
            mean, std = np.nanmean(block, axis=0), np.nanstd(block, axis=0)
        valid = np.isfinite(std) & (std > 0.)
        block = np.where(valid, (block - np.where(valid, mean, 0.)) / np.where(valid, std, 1.), np.where(np.isnan(block), np.nan, 0.))
        values[np.ix_(rows, columns)] = block
    return FeatureMatrix(matrix.location_ids, values, matrix.names, matrix.sources, matrix.years)
