"""
Load, validate and write dataset bundles: one CSV file per layer plus a ``manifest.json``,
nightlight pixels partitioned by year.

A minimal manifest reads:
```
{"country_code": "SL",
 "layers": {"households": "households.csv", "clusters": "clusters.csv", "places": "places.csv"},
 "nightlight": {"2016": "nightlight_2016.csv"}}
```
"""

import os
import logging

import numpy as np
import pandas as pd

from . import utils
from .geo import valid_coordinates
from .utils import BaseClass


logger = logging.getLogger('Ingest')


URBAN_KINDS = ('city', 'town', 'neighborhood')
RURAL_KINDS = ('village', 'hamlet', 'isolated_dwelling')
SETTLEMENTS = ('urban', 'rural')

REQUIRED_LAYERS = ('households', 'clusters', 'places')
OPTIONAL_LAYERS = ('population_tiles', 'movement_tiles', 'movement_edges', 'demographics', 'poi_points',
                   'road_segments', 'building_points', 'cells', 'embeddings')

N_ASSET_COLUMNS = 10
N_EMBEDDING_COLUMNS = 784
EMBEDDING_COLUMNS = ['emb_{:03d}'.format(i) for i in range(N_EMBEDDING_COLUMNS)]

DEFAULT_ASSET_COLUMNS = ['water_source', 'toilet_facility', 'floor_material', 'electricity', 'television',
                         'refrigerator', 'phone', 'car', 'bicycle', 'sleeping_rooms']

DEFAULT_POI_CATEGORIES = ['atm', 'bank', 'school', 'hospital', 'clinic', 'pharmacy', 'marketplace', 'fuel',
                          'restaurant', 'cafe', 'bar', 'place_of_worship', 'police', 'post_office', 'library',
                          'university', 'college', 'kindergarten', 'bus_station', 'supermarket', 'convenience',
                          'hotel', 'townhall', 'community_centre']

DEFAULT_DEMOGRAPHICS_COLUMNS = ['users_total', 'users_male', 'users_female']\
                               + ['users_age_{}'.format(age) for age in ['13_17', '18_24', '25_34', '35_44', '45_54', '55_64', '65_plus']]\
                               + ['device_android', 'device_ios', 'device_feature_phone', 'device_smartphone',
                                  'network_wifi', 'network_2g', 'network_3g', 'network_4g']\
                               + ['education_high_school', 'education_college', 'education_graduate', 'education_unspecified']\
                               + ['frequent_traveler', 'expat', 'small_business_owner', 'technology_early_adopter', 'commuter',
                                  'parent', 'relationship_single', 'relationship_married', 'employer_listed',
                                  'interest_agriculture', 'interest_business', 'interest_education', 'interest_fashion',
                                  'interest_sports', 'interest_travel']

# column -> kind, for each layer; 'assets', 'demographics', 'embeddings' columns are appended from the manifest
LAYER_COLUMNS = {'households': {'household_id': 'id', 'cluster_id': 'id'},
                 'clusters': {'cluster_id': 'id', 'lat': 'lat', 'lon': 'lon', 'year': 'year', 'settlement': SETTLEMENTS},
                 'places': {'place_id': 'id', 'lat': 'lat', 'lon': 'lon', 'kind': URBAN_KINDS + RURAL_KINDS},
                 'population_tiles': {'lat': 'lat', 'lon': 'lon', 'population': 'nonnegative'},
                 'movement_tiles': {'tile_id': 'id', 'lat': 'lat', 'lon': 'lon'},
                 'movement_edges': {'tile_from': 'id', 'tile_to': 'id', 'count': 'positive'},
                 'demographics': {'location_id': 'id'},
                 'poi_points': {'lat': 'lat', 'lon': 'lon', 'category': 'id'},
                 'road_segments': {'lat_from': 'lat', 'lon_from': 'lon', 'lat_to': 'lat', 'lon_to': 'lon'},
                 'building_points': {'lat': 'lat', 'lon': 'lon'},
                 'cells': {'lat': 'lat', 'lon': 'lon', 'tower_id': 'id'},
                 'nightlight': {'lat': 'lat', 'lon': 'lon', 'radiance': 'float', 'year': 'year'},
                 'embeddings': {'location_id': 'id'}}


class SchemaError(ValueError):

    """Error raised when a record does not match its layer schema."""

    def __init__(self, file, row, reason):
        self.file, self.row, self.reason = file, row, reason
        super().__init__('{}{}: {}'.format(file, '' if row is None else ':{:d}'.format(row), reason))


class BundleSchemaError(ValueError):

    """Error raised when loading a bundle hits schema errors; ``errors`` holds all :class:`SchemaError`."""

    def __init__(self, errors, max_display=10):
        self.errors = list(errors)
        lines = [str(error) for error in self.errors[:max_display]]
        if len(self.errors) > max_display:
            lines.append('... and {:d} more'.format(len(self.errors) - max_display))
        super().__init__('{:d} schema error(s):\n'.format(len(self.errors)) + '\n'.join(lines))


class MissingRequiredLayerError(ValueError):

    """Error raised when a required layer (households, clusters, places) is absent."""


class DanglingReferenceError(ValueError):

    """Error raised when a foreign key (cluster_id, tile_id, location_id) does not resolve."""


def settlement_of_kind(kind):
    """Return settlement ('urban' or 'rural') of populated place ``kind`` (array or str)."""
    kind = np.asarray(kind)
    return np.where(np.isin(kind, URBAN_KINDS), 'urban', 'rural')


def encode_answers(values, domain):
    """
    Ordinal encoding of asset answers.

    Parameters
    ----------
    values : array_like of str
        Raw answers.

    domain : list, None
        Ordered list of admissible answers; the index in the list is the encoding.
        If ``None``, answers are parsed as numbers.

    Returns
    -------
    encoded : array
        Encoded values, NaN where the answer is out of domain.
    """
    values = np.asarray(values, dtype=str)
    if domain is None:
        return pd.to_numeric(pd.Series(values), errors='coerce').to_numpy(dtype='f8')
    mapping = {str(answer): float(index) for index, answer in enumerate(domain)}
    return np.array([mapping.get(value, np.nan) for value in values], dtype='f8')


def _parse_table(filename, columns, errors, extra_columns=(), extra_kind='float', shown_name=None):
    # Read CSV as strings, check header, convert typed columns, collect SchemaError for bad rows
    shown_name = shown_name or filename
    table = pd.read_csv(filename, dtype=str, keep_default_na=False, na_filter=False)
    table.columns = [str(column).strip() for column in table.columns]
    required = dict(columns)
    required.update({column: extra_kind for column in extra_columns})
    missing = [column for column in required if column not in table.columns]
    for column in missing:
        errors.append(SchemaError(shown_name, None, 'missing column {}'.format(column)))
    if missing:
        return None
    table = table[list(required)].copy()
    bad = np.zeros(len(table), dtype='?')
    # file line numbers: header is line 1
    lines = np.arange(len(table)) + 2

    def report(mask, reason):
        for line in lines[mask & ~bad]:
            errors.append(SchemaError(shown_name, int(line), reason))
        bad[...] |= mask

    for column, kind in required.items():
        raw = table[column].str.strip()
        if kind == 'id':
            report(raw.to_numpy() == '', 'empty {}'.format(column))
            table[column] = raw
            continue
        if isinstance(kind, tuple):
            report(~raw.isin(kind).to_numpy(), '{} must be one of {}'.format(column, list(kind)))
            table[column] = raw
            continue
        if kind == 'raw':
            table[column] = raw
            continue
        values = pd.to_numeric(raw, errors='coerce').to_numpy(dtype='f8')
        empty = raw.to_numpy() == ''
        if kind == 'missing_float':
            report(~empty & ~np.isfinite(values), 'non-numeric {}'.format(column))
        else:
            report(~np.isfinite(values), 'non-numeric or missing {}'.format(column))
        with np.errstate(invalid='ignore'):
            if kind == 'nonnegative':
                report(values < 0., '{} must be >= 0'.format(column))
            elif kind == 'positive':
                report(values <= 0., '{} must be > 0'.format(column))
            elif kind == 'year':
                report(np.isfinite(values) & (values != np.round(values)), '{} must be an integer'.format(column))
        table[column] = values
    for latname, lonname in [('lat', 'lon'), ('lat_from', 'lon_from'), ('lat_to', 'lon_to')]:
        if latname in required:
            report(~valid_coordinates(table[latname], table[lonname]), 'invalid coordinates ({}, {})'.format(latname, lonname))
    if 'year' in required and not bad.any():
        table['year'] = table['year'].astype('i8')
    return table.reset_index(drop=True)


class DatasetBundle(BaseClass):
    """
    Validated, typed collection of all layers of a country.
    Absent layers are ``None`` (not empty tables).
    """

    def __init__(self, country_code, layers, nightlight=None, asset_columns=None, asset_domains=None,
                 demographics_columns=None, poi_categories=None, iwi_weights=None):
        """
        Initialize :class:`DatasetBundle`.

        Parameters
        ----------
        country_code : str
            Country code.

        layers : dict
            Layer name -> :class:`pandas.DataFrame` (or ``None`` if absent).

        nightlight : dict, default=None
            Year -> :class:`pandas.DataFrame` of nightlight pixels.

        asset_columns : list, default=None
            Names of the 10 asset columns of the households layer.

        asset_domains : dict, default=None
            Asset column -> ordered list of admissible answers. Columns without domain are numeric.

        demographics_columns : list, default=None
            Names of the 37 demographics columns.

        poi_categories : list, default=None
            Names of the 24 POI categories.

        iwi_weights : dict, default=None
            Fixed asset weight table, bypassing PCA (see :func:`groundtruth.compute_asset_weights`).
        """
        self.country_code = str(country_code)
        self.layers = {name: layers.get(name, None) for name in REQUIRED_LAYERS + OPTIONAL_LAYERS}
        self.nightlight = {int(year): table for year, table in (nightlight or {}).items()}
        self.asset_columns = list(asset_columns if asset_columns is not None else DEFAULT_ASSET_COLUMNS)
        self.asset_domains = {str(name): list(domain) for name, domain in (asset_domains or {}).items()}
        self.demographics_columns = list(demographics_columns if demographics_columns is not None else DEFAULT_DEMOGRAPHICS_COLUMNS)
        self.poi_categories = list(poi_categories if poi_categories is not None else DEFAULT_POI_CATEGORIES)
        self.iwi_weights = iwi_weights

    def __getattr__(self, name):
        layers = self.__dict__.get('layers', {})
        if name in layers:
            return layers[name]
        raise AttributeError('{} has no attribute {}'.format(self.__class__.__name__, name))

    def has(self, name):
        """Whether layer ``name`` is present."""
        if name == 'nightlight':
            return bool(self.nightlight)
        return self.layers.get(name, None) is not None

    @property
    def absent_layers(self):
        """List of absent layers."""
        toret = [name for name in OPTIONAL_LAYERS if not self.has(name)]
        if not self.has('nightlight'): toret.append('nightlight')
        return toret

    @property
    def years(self):
        """Sorted survey years."""
        return sorted(set(self.clusters['year'].tolist()))

    @property
    def nightlight_years(self):
        """Sorted years with nightlight pixels."""
        return sorted(self.nightlight)

    def nightlight_year(self, year):
        """Return nightlight year to use for locations of ``year``: ``year`` itself if available, else the closest available year (earlier on ties)."""
        years = self.nightlight_years
        if not years: return None
        if year in years: return year
        return min(years, key=lambda y: (abs(y - year), y))

    def place_settlement(self):
        """Return settlement ('urban' or 'rural') of each populated place."""
        return settlement_of_kind(self.places['kind'].to_numpy())

    def encode_assets(self):
        """Return household asset answers encoded as an array of shape (n_households, n_asset_columns)."""
        return np.column_stack([encode_answers(self.households[column], self.asset_domains.get(column, None))
                                for column in self.asset_columns]).reshape(len(self.households), len(self.asset_columns))

    def fingerprint(self):
        """Return a digest of all layer contents."""
        hashes = []
        for name in REQUIRED_LAYERS + OPTIONAL_LAYERS:
            table = self.layers[name]
            hashes.append(name if table is None else name + utils.digest(pd.util.hash_pandas_object(table, index=False).to_numpy()))
        for year in self.nightlight_years:
            hashes.append(str(year) + utils.digest(pd.util.hash_pandas_object(self.nightlight[year], index=False).to_numpy()))
        return utils.digest(self.country_code, *hashes)

    def manifest(self):
        """Return manifest dictionary, as written by :func:`write_bundle`."""
        toret = {'country_code': self.country_code,
                 'layers': {name: '{}.csv'.format(name) for name in REQUIRED_LAYERS + OPTIONAL_LAYERS if self.has(name)},
                 'nightlight': {str(year): 'nightlight_{:d}.csv'.format(year) for year in self.nightlight_years},
                 'asset_columns': self.asset_columns,
                 'asset_domains': self.asset_domains,
                 'demographics_columns': self.demographics_columns,
                 'poi_categories': self.poi_categories}
        if self.iwi_weights is not None:
            toret['iwi_weights'] = self.iwi_weights
        return toret

    def __getstate__(self):
        return dict(self.__dict__)

    def __setstate__(self, state):
        self.__dict__.update(state)


def _read_manifest(root_dir, manifest):
    if manifest is None:
        manifest = os.path.join(root_dir, 'manifest.json')
    if isinstance(manifest, (str, os.PathLike)):
        filename = str(manifest)
        if root_dir is None:
            root_dir = os.path.dirname(filename)
        manifest = utils.read_json(filename)
    return root_dir or '.', dict(manifest)


def load_bundle(root_dir=None, manifest=None):
    """
    Load and validate a dataset bundle.

    Parameters
    ----------
    root_dir : str, Path, default=None
        Directory layer paths are relative to. Defaults to the manifest directory.

    manifest : str, Path, dict, default=None
        Manifest dictionary or path to manifest JSON file. Defaults to ``root_dir/manifest.json``.

    Returns
    -------
    bundle : DatasetBundle
    """
    root_dir, manifest = _read_manifest(root_dir, manifest)
    layer_paths = dict(manifest.get('layers', {}))
    manifest_name = 'manifest'
    errors = []
    missing = [name for name in REQUIRED_LAYERS if name not in layer_paths]
    if missing:
        raise MissingRequiredLayerError('required layer(s) {} absent from manifest'.format(missing))
    unknown = [name for name in layer_paths if name not in REQUIRED_LAYERS + OPTIONAL_LAYERS]
    if unknown:
        errors.append(SchemaError(manifest_name, None, 'unknown layer(s) {}'.format(unknown)))

    asset_columns = list(manifest.get('asset_columns', DEFAULT_ASSET_COLUMNS))
    if len(asset_columns) != N_ASSET_COLUMNS:
        errors.append(SchemaError(manifest_name, None, 'asset_columns must list {:d} columns, found {:d}'.format(N_ASSET_COLUMNS, len(asset_columns))))
    asset_domains = dict(manifest.get('asset_domains', {}))
    demographics_columns = list(manifest.get('demographics_columns', DEFAULT_DEMOGRAPHICS_COLUMNS))
    poi_categories = list(manifest.get('poi_categories', DEFAULT_POI_CATEGORIES))

    layers = {}
    for name, path in layer_paths.items():
        if name not in LAYER_COLUMNS: continue
        filename = os.path.join(root_dir, path)
        if not os.path.isfile(filename):
            if name in REQUIRED_LAYERS:
                raise MissingRequiredLayerError('required layer {} not found at {}'.format(name, filename))
            logger.warning('Layer {} not found at {}, considered absent.'.format(name, filename))
            continue
        extra_columns, extra_kind = (), 'float'
        if name == 'households': extra_columns, extra_kind = asset_columns, 'raw'
        elif name == 'demographics': extra_columns, extra_kind = demographics_columns, 'missing_float'
        elif name == 'embeddings': extra_columns, extra_kind = EMBEDDING_COLUMNS, 'missing_float'
        table = _parse_table(filename, LAYER_COLUMNS[name], errors, extra_columns=extra_columns, extra_kind=extra_kind, shown_name=path)
        if table is None: continue
        if name == 'households':
            for column in asset_columns:
                encoded = encode_answers(table[column], asset_domains.get(column, None))
                for line in np.flatnonzero(~np.isfinite(encoded)):
                    errors.append(SchemaError(path, int(line) + 2, 'answer {!r} of {} out of domain'.format(table[column].iloc[line], column)))
        if name == 'poi_points':
            for line in np.flatnonzero(~table['category'].isin(poi_categories).to_numpy()):
                errors.append(SchemaError(path, int(line) + 2, 'unknown POI category {!r}'.format(table['category'].iloc[line])))
        layers[name] = table
        logger.info('Loaded layer {} with {:d} rows.'.format(name, len(table)))

    nightlight = {}
    for year, path in manifest.get('nightlight', {}).items():
        filename = os.path.join(root_dir, path)
        table = _parse_table(filename, LAYER_COLUMNS['nightlight'], errors, shown_name=path)
        if table is None: continue
        year = int(year)
        for line in np.flatnonzero(table['year'].to_numpy() != year):
            errors.append(SchemaError(path, int(line) + 2, 'year {} does not match partition year {:d}'.format(table['year'].iloc[line], year)))
        nightlight[year] = table
        logger.info('Loaded {:d} nightlight pixels for year {:d}.'.format(len(table), year))

    if errors:
        raise BundleSchemaError(errors)
    bundle = DatasetBundle(manifest.get('country_code', ''), layers, nightlight=nightlight, asset_columns=asset_columns,
                           asset_domains=asset_domains, demographics_columns=demographics_columns,
                           poi_categories=poi_categories, iwi_weights=manifest.get('iwi_weights', None))
    validate_bundle(bundle)
    return bundle


def write_bundle(bundle, root_dir):
    """Write :class:`DatasetBundle` ``bundle`` to directory ``root_dir`` (CSV layers and ``manifest.json``)."""
    utils.mkdir(root_dir)
    manifest = bundle.manifest()
    for name, path in manifest['layers'].items():
        bundle.layers[name].to_csv(os.path.join(root_dir, path), index=False, na_rep='')
    for year, path in manifest['nightlight'].items():
        bundle.nightlight[int(year)].to_csv(os.path.join(root_dir, path), index=False)
    utils.write_json(os.path.join(root_dir, 'manifest.json'), manifest)
    logger.info('Bundle {} written to {}.'.format(bundle.country_code, root_dir))
    return manifest


def _check_unique(table, column, what):
    duplicated = table[column][table[column].duplicated()]
    if len(duplicated):
        raise DanglingReferenceError('duplicate {} {}'.format(what, sorted(set(duplicated.tolist()))[:10]))


def validate_bundle(bundle):
    """
    Check references of :class:`DatasetBundle` ``bundle`` and report counts.
    Does not modify ``bundle``.

    Returns
    -------
    report : dict
        Rows per layer (``None`` if absent), nightlight pixels per year, clusters per year,
        settlement counts and shares, places per settlement, and warnings.
    """
    for name in REQUIRED_LAYERS:
        if not bundle.has(name):
            raise MissingRequiredLayerError('required layer {} is absent'.format(name))
    households, clusters, places = bundle.households, bundle.clusters, bundle.places
    warnings = []
    if not len(clusters):
        raise DanglingReferenceError('no clusters, years cannot be empty')
    _check_unique(clusters, 'cluster_id', 'cluster_id')
    _check_unique(households, 'household_id', 'household_id')
    unknown = ~households['cluster_id'].isin(clusters['cluster_id'])
    if unknown.any():
        raise DanglingReferenceError('households reference unknown cluster_id {}'.format(sorted(set(households['cluster_id'][unknown]))[:10]))
    empty = ~clusters['cluster_id'].isin(households['cluster_id'])
    if empty.any():
        raise DanglingReferenceError('clusters {} reference no household'.format(sorted(clusters['cluster_id'][empty])[:10]))
    if places['place_id'].duplicated().any():
        warnings.append('duplicate place_id in places layer')
    location_ids = pd.concat([clusters['cluster_id'], places['place_id']])
    for name in ['demographics', 'embeddings']:
        if bundle.has(name):
            unknown = ~bundle.layers[name]['location_id'].isin(location_ids)
            if unknown.any():
                raise DanglingReferenceError('{} reference unknown location_id {}'.format(name, sorted(set(bundle.layers[name]['location_id'][unknown]))[:10]))
    if bundle.has('movement_tiles'):
        _check_unique(bundle.movement_tiles, 'tile_id', 'tile_id')
    if bundle.has('movement_edges'):
        if not bundle.has('movement_tiles'):
            raise DanglingReferenceError('movement_edges present without movement_tiles')
        tiles = bundle.movement_tiles['tile_id']
        for column in ['tile_from', 'tile_to']:
            unknown = ~bundle.movement_edges[column].isin(tiles)
            if unknown.any():
                raise DanglingReferenceError('movement_edges reference unknown {} {}'.format(column, sorted(set(bundle.movement_edges[column][unknown]))[:10]))
    if not bundle.has('movement_edges') or not len(bundle.movement_edges):
        warnings.append('empty movements table: mobility features will be distance-only/missing')
    missing_years = [year for year in bundle.years if year not in bundle.nightlight]
    if missing_years:
        warnings.append('no nightlight pixels for survey year(s) {}, closest year used'.format(missing_years))
    for name in bundle.absent_layers:
        if name not in ['movement_edges']:
            warnings.append('layer {} absent: its features will be missing'.format(name))

    report = {'country_code': bundle.country_code,
              'layers': {name: (len(bundle.layers[name]) if bundle.has(name) else None) for name in REQUIRED_LAYERS + OPTIONAL_LAYERS},
              'nightlight': {str(year): len(bundle.nightlight[year]) for year in bundle.nightlight_years},
              'clusters_per_year': {str(year): int((clusters['year'] == year).sum()) for year in bundle.years},
              'settlement': {}, 'places_per_settlement': {}, 'warnings': warnings}
    for settlement in SETTLEMENTS:
        count = int((clusters['settlement'] == settlement).sum())
        report['settlement'][settlement] = {'count': count, 'share': count / len(clusters)}
    place_settlement = bundle.place_settlement()
    for settlement in SETTLEMENTS:
        report['places_per_settlement'][settlement] = int((place_settlement == settlement).sum())
    for warning in warnings:
        logger.warning(warning)
    return report
