"""
Synthetic countries with a known wealth process.

Layers are drawn around a handful of cities; the mean wealth of each cluster is a sparse nonlinear function
of 6 features (one per metadata source) computed by :mod:`features` at the cluster coordinates, plus noise
orthogonal to it, so that the best achievable normalized error is known exactly.
Household asset answers are staggered ordinal cuts of each household's wealth: their sum recovers the wealth
to the nearest integer, such that the fixed unit asset weights shipped with the bundle return it as IWI.
"""

import os
import logging
from dataclasses import dataclass, asdict, field

import numpy as np
import pandas as pd

from . import utils
from .geo import haversine, KM_PER_DEGREE
from .ingest import (DatasetBundle, URBAN_KINDS, RURAL_KINDS, EMBEDDING_COLUMNS, DEFAULT_ASSET_COLUMNS,
                     DEFAULT_DEMOGRAPHICS_COLUMNS, DEFAULT_POI_CATEGORIES, validate_bundle, write_bundle)
from .features import FeatureConfig, FeatureExtractor, LocationSet, assemble


logger = logging.getLogger('Synth')


RECORD_FILENAME = 'synth_record.json'
N_LEVELS = 10
# (source, feature, transform, shape, coefficient); the demographics feature is named after the first demographics column
PLANTED_FEATURES = [('population', 'pop_total_population_within_5km', 'log1p', 'linear', 1.0),
                    ('infrastructure', 'inf_buildings_count', 'log1p', 'tanh', 0.8),
                    ('demographics', None, 'log1p', 'tanh', 0.7),
                    ('connectivity', 'con_distance_to_closest_cell', 'log1p', 'linear', -0.5),
                    ('mobility', 'mob_people_flow_in', 'log1p', 'tanh', 0.4),
                    ('nightlight', 'ntl_mean_5km', 'log1p', 'tanh', 0.3)]
# keys of derived seeds, one per layer
(CITY_KEY, PLACE_KEY, CLUSTER_KEY, TILE_KEY, MOBILITY_KEY, DEMOGRAPHICS_KEY, POI_KEY, ROAD_KEY,
 BUILDING_KEY, CELL_KEY, NIGHTLIGHT_KEY, EMBEDDING_KEY, NOISE_KEY, HOUSEHOLD_KEY) = range(14)


@dataclass(frozen=True)
class SynthSpec:
    """
    Settings of a synthetic country.

    Wealth: mu = f(planted features) + eta_mu * noise, with f of mean ``wealth_mean`` and standard deviation ``wealth_std``
    over clusters, eta_mu such that the best normalized error of mu is ``target_nrmse_mu``;
    sigma = c0 + c1 mu + c2 mu^2 + ``sigma_noise`` * noise with ``sigma_coefficients`` = (c0, c1, c2).

    ``planted`` reuses the planted function of another record (e.g. to build a second country sharing the same wealth process),
    and ``f_band`` = (low, high) keeps only clusters with low <= f <= high.
    """

    n_clusters: int = 1000
    n_places: int = 1500
    years: tuple = (2016, 2019)
    urban_share: float = 0.3
    urban_place_share: float = 0.3
    households_per_cluster: int = 25
    n_cities: int = 12
    lat_range: tuple = (7., 10.)
    lon_range: tuple = (-13., -10.)
    target_nrmse_mu: float = 0.4
    sigma_noise: float = 1.5
    wealth_mean: float = 45.
    wealth_std: float = 15.
    sigma_coefficients: tuple = (4., 0.45, -0.0035)
    displacement_km: tuple = (2., 5.)
    embeddings: bool = False
    country_code: str = 'SYN'
    planted: dict = field(default=None, compare=False)
    f_band: tuple = None
    oversample: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 10:
            raise ValueError('n_clusters must be >= 10, found {:d}'.format(self.n_clusters))
        if self.n_places < 1:
            raise ValueError('n_places must be >= 1')
        if not 0. <= self.urban_share <= 1. or not 0. <= self.urban_place_share <= 1.:
            raise ValueError('urban shares must be in [0, 1]')
        if self.urban_share > 0. and self.urban_place_share == 0.:
            raise ValueError('urban clusters require urban places')
        if self.urban_share < 1. and self.urban_place_share == 1.:
            raise ValueError('rural clusters require rural places')
        if not 0. <= self.target_nrmse_mu < 1.:
            raise ValueError('target_nrmse_mu must be in [0, 1), found {}'.format(self.target_nrmse_mu))
        if self.sigma_noise < 0. or self.wealth_std <= 0.:
            raise ValueError('sigma_noise must be >= 0 and wealth_std > 0')
        if len(self.years) < 1 or self.households_per_cluster < 2:
            raise ValueError('at least one year and two households per cluster are required')
        object.__setattr__(self, 'years', tuple(int(year) for year in self.years))

    def to_dict(self):
        toret = asdict(self)
        toret.pop('planted')
        return toret


def _offset(lat, lon, distance_km, bearing):
    lat = np.asarray(lat, dtype='f8') + distance_km * np.cos(bearing) / KM_PER_DEGREE
    lon = np.asarray(lon, dtype='f8') + distance_km * np.sin(bearing) / (KM_PER_DEGREE * np.cos(np.radians(lat)))
    return lat, lon


def _scatter(rng, lat, lon, scale_km, size=None):
    # random bearing, half-normal distance (km)
    size = np.broadcast(lat, lon, scale_km).shape if size is None else size
    return _offset(lat, lon, np.abs(rng.normal(0., 1., size=size)) * scale_km * np.sqrt(2.), rng.uniform(0., 2. * np.pi, size=size))


def _grid(spec, step):
    lat = np.arange(spec.lat_range[0] + step / 2., spec.lat_range[1], step)
    lon = np.arange(spec.lon_range[0] + step / 2., spec.lon_range[1], step)
    lat, lon = np.meshgrid(lat, lon, indexing='ij')
    return lat.ravel(), lon.ravel()


def _uniform(rng, spec, size):
    return rng.uniform(*spec.lat_range, size=size), rng.uniform(*spec.lon_range, size=size)


def _city_field(lat, lon, cities, amplitude, width=1.):
    toret = np.zeros(np.shape(lat), dtype='f8')
    for city_lat, city_lon, radius, amp in zip(cities['lat'], cities['lon'], cities['radius_km'], amplitude):
        distance = haversine(lat, lon, city_lat, city_lon)
        toret += amp * np.exp(-0.5 * (distance / (width * radius))**2)
    return toret


def _ids(prefix, size, start=1):
    width = max(len(str(size + start)), 4)
    return np.array(['{}{:0{}d}'.format(prefix, index, width) for index in range(start, size + start)], dtype=object)


def generate_cities(spec):
    """Return table of cities: lat, lon, size (Zipf), radius_km."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, CITY_KEY))
    margin = 0.2
    lat = rng.uniform(spec.lat_range[0] + margin, spec.lat_range[1] - margin, size=spec.n_cities)
    lon = rng.uniform(spec.lon_range[0] + margin, spec.lon_range[1] - margin, size=spec.n_cities)
    size = 2e5 / np.arange(1, spec.n_cities + 1)
    return pd.DataFrame({'lat': lat, 'lon': lon, 'size': size, 'radius_km': 2. + 6. * np.sqrt(size / size.max())})


def generate_places(spec, cities):
    """Populated places: urban places scattered around cities (weighted by size), rural places uniform."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, PLACE_KEY))
    n_urban = int(round(spec.n_places * spec.urban_place_share))
    n_rural = spec.n_places - n_urban
    icity = rng.choice(len(cities), size=n_urban, p=cities['size'] / cities['size'].sum())
    urban_lat, urban_lon = _scatter(rng, cities['lat'].to_numpy()[icity], cities['lon'].to_numpy()[icity], cities['radius_km'].to_numpy()[icity] / 2.)
    rural_lat, rural_lon = _uniform(rng, spec, n_rural)
    kind = np.concatenate([rng.choice(URBAN_KINDS, size=n_urban, p=[0.2, 0.3, 0.5]), rng.choice(RURAL_KINDS, size=n_rural, p=[0.5, 0.35, 0.15])])
    lat, lon = np.concatenate([urban_lat, rural_lat]), np.concatenate([urban_lon, rural_lon])
    lat, lon = np.clip(lat, *spec.lat_range), np.clip(lon, *spec.lon_range)
    return pd.DataFrame({'place_id': _ids('P', spec.n_places), 'lat': lat, 'lon': lon, 'kind': kind.astype(object)})


def generate_cluster_sites(spec, places, size):
    """
    Candidate survey clusters at populated places (urban clusters at urban places), with years
    and reported coordinates displaced by up to ``spec.displacement_km`` (urban, rural).
    """
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, CLUSTER_KEY))
    urban = np.isin(places['kind'].to_numpy(), URBAN_KINDS)
    n_urban = int(round(size * spec.urban_share))
    iplace = np.concatenate([rng.choice(np.flatnonzero(urban), size=n_urban) if n_urban else np.empty(0, dtype='i8'),
                             rng.choice(np.flatnonzero(~urban), size=size - n_urban) if size > n_urban else np.empty(0, dtype='i8')])
    iplace = iplace[rng.permutation(size)]
    settlement = np.where(urban[iplace], 'urban', 'rural').astype(object)
    max_km = np.where(settlement == 'urban', spec.displacement_km[0], spec.displacement_km[1])
    lat, lon = _offset(places['lat'].to_numpy()[iplace], places['lon'].to_numpy()[iplace], rng.uniform(0., 1., size=size) * max_km,
                       rng.uniform(0., 2. * np.pi, size=size))
    year = np.array(spec.years)[np.arange(size) * len(spec.years) // size]
    return pd.DataFrame({'lat': np.clip(lat, *spec.lat_range), 'lon': np.clip(lon, *spec.lon_range), 'year': year.astype('i8'),
                         'settlement': settlement, 'true_place_id': places['place_id'].to_numpy()[iplace]})


def generate_population_tiles(spec, cities, places, step=0.03):
    """Population tiles on a regular grid: city kernels, rural background and a bump at each populated place."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, TILE_KEY))
    lat, lon = _grid(spec, step)
    area = (step * KM_PER_DEGREE)**2
    density = _city_field(lat, lon, cities, cities['size'] / (2. * np.pi * cities['radius_km']**2)) + 20.
    nlon = int(np.round((spec.lon_range[1] - spec.lon_range[0]) / step))
    ilat = np.clip(((places['lat'] - spec.lat_range[0]) / step).astype(int), 0, lat.size // nlon - 1)
    ilon = np.clip(((places['lon'] - spec.lon_range[0]) / step).astype(int), 0, nlon - 1)
    expected = density * area
    np.add.at(expected, (ilat * nlon + ilon).to_numpy(), np.where(np.isin(places['kind'], URBAN_KINDS), 2000., 300.))
    return pd.DataFrame({'lat': lat, 'lon': lon, 'population': rng.poisson(expected).astype('f8')})


def generate_mobility(spec, tiles, step=0.1, n_destinations=6, max_km=50.):
    """Mobility tiles on a coarse grid and movement edges, gravity-like between populated tiles, with self-loops."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, MOBILITY_KEY))
    lat, lon = _grid(spec, step)
    nlon = int(np.round((spec.lon_range[1] - spec.lon_range[0]) / step))
    nlat = lat.size // nlon
    ilat = np.clip(((tiles['lat'] - spec.lat_range[0]) / step).astype(int), 0, nlat - 1)
    ilon = np.clip(((tiles['lon'] - spec.lon_range[0]) / step).astype(int), 0, nlon - 1)
    population = np.bincount((ilat * nlon + ilon).to_numpy(), weights=tiles['population'].to_numpy(), minlength=lat.size)
    tile_ids = _ids('T', lat.size)
    edges = []
    for isource in np.flatnonzero(population > 0):
        distance = haversine(lat[isource], lon[isource], lat, lon)
        candidates = np.flatnonzero((distance <= max_km) & (population > 0) & (np.arange(lat.size) != isource))
        if candidates.size:
            weight = population[candidates] / (distance[candidates] + 5.)
            ndest = min(n_destinations, candidates.size)
            for idest in rng.choice(candidates, size=ndest, replace=False, p=weight / weight.sum()):
                edges.append((isource, idest, 1. + rng.poisson(np.sqrt(population[isource] * population[idest]) / 500.)))
        edges.append((isource, isource, 1. + rng.poisson(population[isource] / 200.)))
    edges = np.array(edges, dtype='f8').reshape(-1, 3)
    movement_tiles = pd.DataFrame({'tile_id': tile_ids, 'lat': lat, 'lon': lon})
    movement_edges = pd.DataFrame({'tile_from': tile_ids[edges[:, 0].astype(int)], 'tile_to': tile_ids[edges[:, 1].astype(int)], 'count': edges[:, 2]})
    return movement_tiles, movement_edges


def generate_demographics(spec, location_ids, columns=DEFAULT_DEMOGRAPHICS_COLUMNS, missing_frac=0.05):
    """Advertising-audience estimates per location, independent of the wealth process except through the first column; some values missing."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, DEMOGRAPHICS_KEY))
    size = len(location_ids)
    total = np.round(rng.lognormal(np.log(200.), 1., size=size))
    values = rng.uniform(0., 1., size=(size, len(columns))) * total[:, None]
    values[:, 0] = total
    values[rng.uniform(0., 1., size=values.shape) < missing_frac] = np.nan
    frame = pd.DataFrame(np.round(values), columns=list(columns))
    frame.insert(0, 'location_id', np.asarray(location_ids, dtype=object))
    return frame


def generate_pois(spec, cities, categories=DEFAULT_POI_CATEGORIES, rural_frac=0.2):
    """Points of interest of each category, mostly around cities."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, POI_KEY))
    frames = []
    for category in categories:
        size = 20 + rng.poisson(30)
        nrural = rng.binomial(size, rural_frac)
        icity = rng.choice(len(cities), size=size - nrural, p=cities['size'] / cities['size'].sum())
        lat, lon = _scatter(rng, cities['lat'].to_numpy()[icity], cities['lon'].to_numpy()[icity], cities['radius_km'].to_numpy()[icity])
        rural_lat, rural_lon = _uniform(rng, spec, nrural)
        frames.append(pd.DataFrame({'lat': np.concatenate([lat, rural_lat]), 'lon': np.concatenate([lon, rural_lon]), 'category': category}))
    toret = pd.concat(frames, ignore_index=True)
    toret['lat'], toret['lon'] = np.clip(toret['lat'], *spec.lat_range), np.clip(toret['lon'], *spec.lon_range)
    return toret


def generate_roads(spec, cities, places, segment_km=2.):
    """Road segments: a chain of inter-city roads (split into ~2 km segments), 8 radial streets per city, 1 km tracks at a third of rural places."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, ROAD_KEY))
    segments = []
    order = np.argsort(cities['lon'].to_numpy(), kind='stable')
    for ifrom, ito in zip(order[:-1], order[1:]):
        lat1, lon1, lat2, lon2 = cities['lat'].iloc[ifrom], cities['lon'].iloc[ifrom], cities['lat'].iloc[ito], cities['lon'].iloc[ito]
        nseg = max(int(np.ceil(haversine(lat1, lon1, lat2, lon2) / segment_km)), 1)
        t = np.linspace(0., 1., nseg + 1)
        lat, lon = lat1 + t * (lat2 - lat1), lon1 + t * (lon2 - lon1)
        segments.append(np.column_stack([lat[:-1], lon[:-1], lat[1:], lon[1:]]))
    for city_lat, city_lon, radius in zip(cities['lat'], cities['lon'], cities['radius_km']):
        bearing = np.arange(8) * np.pi / 4. + rng.uniform(0., np.pi / 4.)
        lat, lon = _offset(np.full(8, city_lat), np.full(8, city_lon), radius, bearing)
        segments.append(np.column_stack([np.full(8, city_lat), np.full(8, city_lon), lat, lon]))
    rural = places[~np.isin(places['kind'], URBAN_KINDS)]
    rural = rural[rng.uniform(0., 1., size=len(rural)) < 1. / 3.]
    lat, lon = _offset(rural['lat'].to_numpy(), rural['lon'].to_numpy(), 1., rng.uniform(0., 2. * np.pi, size=len(rural)))
    segments.append(np.column_stack([rural['lat'].to_numpy(), rural['lon'].to_numpy(), lat, lon]))
    segments = np.concatenate(segments, axis=0)
    segments[:, [0, 2]] = np.clip(segments[:, [0, 2]], *spec.lat_range)
    segments[:, [1, 3]] = np.clip(segments[:, [1, 3]], *spec.lon_range)
    return pd.DataFrame(segments, columns=['lat_from', 'lon_from', 'lat_to', 'lon_to'])


def generate_buildings(spec, cities, places):
    """Building footprint centroids around each place (denser for urban places) and across cities."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, BUILDING_KEY))
    urban = np.isin(places['kind'], URBAN_KINDS)
    counts = rng.poisson(np.where(urban, 60., 8.))
    lat, lon = _scatter(rng, np.repeat(places['lat'].to_numpy(), counts), np.repeat(places['lon'].to_numpy(), counts), 0.4)
    counts = rng.poisson(cities['size'].to_numpy() / 500.)
    city_lat, city_lon = _scatter(rng, np.repeat(cities['lat'].to_numpy(), counts), np.repeat(cities['lon'].to_numpy(), counts),
                                  np.repeat(cities['radius_km'].to_numpy(), counts))
    lat, lon = np.concatenate([lat, city_lat]), np.concatenate([lon, city_lon])
    return pd.DataFrame({'lat': np.clip(lat, *spec.lat_range), 'lon': np.clip(lon, *spec.lon_range)})


def generate_cells(spec, cities, n_rural_towers=60):
    """Cell towers around cities and in the countryside, each carrying 1 to 3 cells."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, CELL_KEY))
    counts = 3 + rng.poisson(cities['size'].to_numpy() / 2e4)
    lat, lon = _scatter(rng, np.repeat(cities['lat'].to_numpy(), counts), np.repeat(cities['lon'].to_numpy(), counts),
                        np.repeat(cities['radius_km'].to_numpy(), counts))
    rural_lat, rural_lon = _uniform(rng, spec, n_rural_towers)
    lat, lon = np.concatenate([lat, rural_lat]), np.concatenate([lon, rural_lon])
    ncells = rng.randint(1, 4, size=lat.size)
    tower_ids = _ids('W', lat.size)
    lat, lon = _scatter(rng, np.repeat(lat, ncells), np.repeat(lon, ncells), 0.01)
    return pd.DataFrame({'lat': np.clip(lat, *spec.lat_range), 'lon': np.clip(lon, *spec.lon_range), 'tower_id': np.repeat(tower_ids, ncells)})


def generate_nightlight(spec, cities, step=0.025):
    """Nightlight pixels of each year: city glow growing by 5% a year over a noisy background."""
    lat, lon = _grid(spec, step)
    glow = _city_field(lat, lon, cities, 60. * np.sqrt(cities['size'] / cities['size'].max()), width=1.5)
    toret = {}
    for iyear, year in enumerate(spec.years):
        rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, NIGHTLIGHT_KEY, iyear))
        radiance = glow * (1. + 0.05 * iyear) * rng.lognormal(0., 0.2, size=lat.size) + rng.exponential(0.3, size=lat.size)
        toret[year] = pd.DataFrame({'lat': lat, 'lon': lon, 'radiance': radiance, 'year': np.full(lat.size, year, dtype='i8')})
    return toret


def generate_embeddings(spec, location_ids, settlement):
    """Image embeddings: noise, with the first dimensions shifted by settlement."""
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, EMBEDDING_KEY))
    values = rng.normal(0., 1., size=(len(location_ids), len(EMBEDDING_COLUMNS)))
    values[:, :8] += np.where(np.asarray(settlement) == 'urban', 1., 0.)[:, None]
    frame = pd.DataFrame(values, columns=EMBEDDING_COLUMNS)
    frame.insert(0, 'location_id', np.asarray(location_ids, dtype=object))
    return frame


def planted_values(names, values, planted):
    """
    Return the planted function f at locations of feature matrix ``values`` (columns ``names``),
    a missing planted feature contributing 0.
    """
    values = np.asarray(values, dtype='f8')
    toret = np.zeros(values.shape[0], dtype='f8')
    for term in planted['terms']:
        x = values[:, list(names).index(term['feature'])]
        if term['transform'] == 'log1p': x = np.log1p(np.maximum(x, 0.))
        z = (x - term['center']) / term['scale']
        z = np.where(np.isfinite(z), z, 0.)
        if term['shape'] == 'tanh': z = np.tanh(z)
        toret += term['coefficient'] * z
    return planted['wealth_mean'] + planted['wealth_std'] * (toret - planted['raw_center']) / planted['raw_scale']


def calibrate_planted(spec, names, values, demographics_columns=DEFAULT_DEMOGRAPHICS_COLUMNS):
    """Fix centers and scales of the planted terms, and of their sum, on feature matrix ``values``."""
    values = np.asarray(values, dtype='f8')
    terms, raw = [], np.zeros(values.shape[0], dtype='f8')
    for source, feature, transform, shape, coefficient in PLANTED_FEATURES:
        if feature is None: feature = 'dem_{}'.format(demographics_columns[0])
        x = values[:, list(names).index(feature)]
        if transform == 'log1p': x = np.log1p(np.maximum(x, 0.))
        center, scale = np.nanmean(x), np.nanstd(x)
        if not scale > 0.: scale = 1.
        terms.append({'source': source, 'feature': feature, 'transform': transform, 'shape': shape, 'coefficient': coefficient,
                      'center': float(center), 'scale': float(scale)})
    planted = {'terms': terms, 'wealth_mean': spec.wealth_mean, 'wealth_std': spec.wealth_std, 'raw_center': 0., 'raw_scale': 1.}
    raw = (planted_values(names, values, planted) - spec.wealth_mean) / spec.wealth_std
    planted['raw_center'], planted['raw_scale'] = float(raw.mean()), float(raw.std() or 1.)
    return planted


def orthogonal_noise(rng, reference):
    """Standard normal draws made exactly orthogonal to centered ``reference``, with zero mean and unit (population) standard deviation."""
    reference = np.asarray(reference, dtype='f8') - np.mean(reference)
    noise = rng.standard_normal(reference.size)
    noise -= noise.mean()
    norm = reference.dot(reference)
    if norm > 0.: noise -= noise.dot(reference) / norm * reference
    std = noise.std()
    return noise / std if std > 0. else noise


def asset_levels(wealth):
    """
    Answers (0 to 10) to the 10 asset questions of households of latent ``wealth``:
    question k answers floor((wealth + 0.5 + k) / 10), such that answers sum to the rounded wealth within [0, 100].
    """
    wealth = np.asarray(wealth, dtype='f8')
    k = np.arange(N_LEVELS)
    return np.clip(np.floor((wealth[:, None] + 0.5 + k) / 10.), 0, N_LEVELS).astype('i8')


def unit_asset_weights(n_columns=N_LEVELS):
    """Fixed asset weights returning the sum of answers as IWI."""
    return {'loadings': [1.] * n_columns, 'means': [0.] * n_columns, 'stds': [1.] * n_columns,
            'score_min': 0., 'score_max': float(N_LEVELS * n_columns), 'explained_variance': None}


def generate(spec=None, **kwargs):
    """
    Generate a synthetic country.

    Parameters
    ----------
    spec : SynthSpec, default=None
        Settings; ``kwargs`` update them.

    Returns
    -------
    bundle : DatasetBundle
        Validated bundle.

    record : dict
        Ground-truth parameters: settings, planted function, noise levels, and per-cluster f, mu, g(mu), sigma.
    """
    if spec is None: spec = SynthSpec(**kwargs)
    elif kwargs: spec = SynthSpec(**{**spec.to_dict(), 'planted': spec.planted, **kwargs})
    cities = generate_cities(spec)
    places = generate_places(spec, cities)
    nsites = spec.n_clusters * (spec.oversample if spec.f_band is not None else 1)
    sites = generate_cluster_sites(spec, places, nsites)
    sites.insert(0, 'cluster_id', _ids('C', nsites))
    layers = {'places': places}
    layers['population_tiles'] = generate_population_tiles(spec, cities, places)
    layers['movement_tiles'], layers['movement_edges'] = generate_mobility(spec, layers['population_tiles'])
    layers['poi_points'] = generate_pois(spec, cities)
    layers['road_segments'] = generate_roads(spec, cities, places)
    layers['building_points'] = generate_buildings(spec, cities, places)
    layers['cells'] = generate_cells(spec, cities)
    nightlight = generate_nightlight(spec, cities)
    location_ids = np.concatenate([sites['cluster_id'].to_numpy(), places['place_id'].to_numpy()])
    layers['demographics'] = generate_demographics(spec, location_ids)
    partial = DatasetBundle(spec.country_code, layers, nightlight=nightlight)
    extractor = FeatureExtractor(partial, cfg=FeatureConfig())
    matrix = assemble(LocationSet.from_clusters(sites.drop(columns='true_place_id')), partial, embeddings=False, extractor=extractor)
    planted = spec.planted or calibrate_planted(spec, matrix.names, matrix.values)
    f = planted_values(matrix.names, matrix.values, planted)
    if spec.f_band is not None:
        keep = np.flatnonzero((f >= spec.f_band[0]) & (f <= spec.f_band[1]))[:spec.n_clusters]
        if keep.size < spec.n_clusters:
            logger.warning('Only {:d} out of {:d} candidate sites within wealth band {}.'.format(keep.size, nsites, spec.f_band))
        if keep.size < 10:
            raise ValueError('fewer than 10 sites within wealth band {}'.format(spec.f_band))
        sites, f = sites.iloc[keep].reset_index(drop=True), f[keep]
        demographics = layers['demographics']
        layers['demographics'] = demographics[demographics['location_id'].isin(location_ids[keep]) | demographics['location_id'].isin(places['place_id'])].reset_index(drop=True)
    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, NOISE_KEY))
    t = spec.target_nrmse_mu
    eta_mu = float(np.std(f) * t / np.sqrt(1. - t**2))
    mu = np.clip(f + eta_mu * orthogonal_noise(rng, f), 0., 100.)
    c0, c1, c2 = spec.sigma_coefficients
    g = c0 + c1 * mu + c2 * mu**2
    sigma = np.maximum(g + spec.sigma_noise * orthogonal_noise(rng, g), 0.)
    clusters = sites[['cluster_id', 'lat', 'lon', 'year', 'settlement']].copy()
    layers['clusters'] = clusters

    rng = np.random.RandomState(seed=utils.derive_seed(spec.seed, HOUSEHOLD_KEY))
    nh = spec.households_per_cluster
    wealth = np.concatenate([mu[i] + sigma[i] * utils.sample_normal_standardized(nh, rng) for i in range(len(clusters))])
    households = pd.DataFrame(asset_levels(wealth).astype(str), columns=DEFAULT_ASSET_COLUMNS)
    households.insert(0, 'cluster_id', np.repeat(clusters['cluster_id'].to_numpy(), nh))
    households.insert(0, 'household_id', np.array(['{}-{:02d}'.format(cluster_id, ih + 1) for cluster_id in clusters['cluster_id'] for ih in range(nh)], dtype=object))
    layers['households'] = households

    if spec.embeddings:
        location_ids = np.concatenate([clusters['cluster_id'].to_numpy(), places['place_id'].to_numpy()])
        settlement = np.concatenate([clusters['settlement'].to_numpy(), np.where(np.isin(places['kind'], URBAN_KINDS), 'urban', 'rural')])
        layers['embeddings'] = generate_embeddings(spec, location_ids, settlement)
    bundle = DatasetBundle(spec.country_code, layers, nightlight=nightlight, asset_columns=DEFAULT_ASSET_COLUMNS, asset_domains={},
                           demographics_columns=DEFAULT_DEMOGRAPHICS_COLUMNS, poi_categories=DEFAULT_POI_CATEGORIES, iwi_weights=unit_asset_weights())
    validate_bundle(bundle)
    record = {'spec': spec.to_dict(), 'planted': planted, 'eta_mu': eta_mu, 'eta_sigma': float(spec.sigma_noise),
              'sigma_coefficients': list(spec.sigma_coefficients),
              'clusters': {'cluster_id': clusters['cluster_id'].tolist(), 'true_place_id': sites['true_place_id'].tolist(),
                           'f': f.tolist(), 'mu': mu.tolist(), 'g': g.tolist(), 'sigma': sigma.tolist()}}
    logger.info('Generated country {} with {:d} clusters, {:d} places, mean wealth {:.1f} +- {:.1f}.'.format(
                spec.country_code, len(clusters), len(places), mu.mean(), mu.std()))
    return bundle, record


def bayes_nrmse(record, stats=None):
    """
    Return the best achievable normalized errors (of mean, of standard deviation) of a generated country:
    noise level over standard deviation of the target.

    Parameters
    ----------
    record : dict
        Ground-truth record, see :func:`generate`.

    stats : pandas.DataFrame, default=None
        Cluster statistics computed from the households (see :func:`groundtruth.compute_ground_truth`), i.e. the targets models are trained on.
        If ``None``, targets are the per-cluster mu and sigma of ``record``, before households are drawn and their answers rounded.

    Returns
    -------
    nrmse_mu, nrmse_sigma : float
    """
    clusters = record['clusters']
    if stats is not None:
        stats = stats.set_index('cluster_id').loc[clusters['cluster_id']]
    toret = []
    for eta, name in [(record['eta_mu'], 'mu'), (record['eta_sigma'], 'sigma')]:
        target = clusters[name] if stats is None else stats[name]
        std = np.std(np.asarray(target, dtype='f8'))
        toret.append(float(eta / std) if std > 0. else 0.)
    return tuple(toret)


def write_record(record, filename):
    """Write ground-truth record to JSON ``filename``."""
    utils.write_json(filename, record)


def read_record(filename):
    return utils.read_json(filename)


def write_country(spec, output_dir):
    """Generate country of :class:`SynthSpec` ``spec``, write bundle and the record sidecar to ``output_dir``; return (bundle, record)."""
    bundle, record = generate(spec)
    write_bundle(bundle, output_dir)
    write_record(record, os.path.join(output_dir, RECORD_FILENAME))
    return bundle, record


def transfer_pair(spec=None, band=(0.1, 0.9), target_nrmse_mu=0.2, seed_offset=1, **kwargs):
    """
    Two countries sharing the same wealth process: A of settings ``spec``, and B whose noise-free wealth f lies within
    the ``band`` quantiles of A's, with noise set for a best normalized error ``target_nrmse_mu``.

    Returns
    -------
    (bundle_A, record_A), (bundle_B, record_B)
    """
    spec = spec or SynthSpec(**kwargs)
    bundle_A, record_A = generate(spec)
    f_band = tuple(float(q) for q in np.quantile(record_A['clusters']['f'], band))
    spec_B = SynthSpec(**{**spec.to_dict(), 'planted': record_A['planted'], 'f_band': f_band, 'target_nrmse_mu': target_nrmse_mu,
                          'seed': spec.seed + seed_offset, 'country_code': spec.country_code + 'B'})
    return (bundle_A, record_A), generate(spec_B)
