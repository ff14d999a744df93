import os

import numpy as np
import pandas as pd
import pytest

from wealthfactory import setup_logging
from wealthfactory.ingest import (DatasetBundle, load_bundle, write_bundle, validate_bundle, encode_answers, settlement_of_kind,
                                  SchemaError, BundleSchemaError, MissingRequiredLayerError, DanglingReferenceError, DEFAULT_ASSET_COLUMNS)


def make_tables(ncluster=4, nhousehold=3):
    clusters = pd.DataFrame({'cluster_id': ['c{:d}'.format(i) for i in range(ncluster)],
                             'lat': 8. + 0.1 * np.arange(ncluster), 'lon': -11. - 0.1 * np.arange(ncluster),
                             'year': [2016, 2019] * (ncluster // 2), 'settlement': ['urban', 'rural'] * (ncluster // 2)})
    rows = []
    for cluster_id in clusters['cluster_id']:
        for ih in range(nhousehold):
            row = {'household_id': '{}-{:d}'.format(cluster_id, ih), 'cluster_id': cluster_id}
            row.update({column: str((ih + icol) % 3) for icol, column in enumerate(DEFAULT_ASSET_COLUMNS)})
            row['water_source'] = ['unprotected', 'well', 'piped'][ih % 3]
            rows.append(row)
    households = pd.DataFrame(rows)
    places = pd.DataFrame({'place_id': ['p0', 'p1', 'p2'], 'lat': [8., 8.1, 8.3], 'lon': [-11., -11.1, -11.3], 'kind': ['city', 'village', 'hamlet']})
    nightlight = pd.DataFrame({'lat': [8., 8.1], 'lon': [-11., -11.1], 'radiance': [3., 0.5], 'year': [2016, 2016]})
    return {'clusters': clusters, 'households': households, 'places': places}, {2016: nightlight}


def write_tables(root, layers, nightlight, **kwargs):
    os.makedirs(root, exist_ok=True)
    manifest = {'country_code': 'XX', 'layers': {}, 'nightlight': {},
                'asset_domains': {'water_source': ['unprotected', 'well', 'piped']}}
    manifest.update(kwargs)
    for name, table in layers.items():
        table.to_csv(os.path.join(root, name + '.csv'), index=False)
        manifest['layers'][name] = name + '.csv'
    for year, table in nightlight.items():
        table.to_csv(os.path.join(root, 'nightlight_{:d}.csv'.format(year)), index=False)
        manifest['nightlight'][str(year)] = 'nightlight_{:d}.csv'.format(year)
    from wealthfactory import utils
    utils.write_json(os.path.join(root, 'manifest.json'), manifest)
    return os.path.join(root, 'manifest.json')


def test_load(tmp_path):
    layers, nightlight = make_tables()
    fn = write_tables(str(tmp_path), layers, nightlight)
    bundle = load_bundle(manifest=fn)
    assert bundle.country_code == 'XX'
    assert bundle.years == [2016, 2019]
    assert bundle.clusters['year'].dtype.kind == 'i'
    assert bundle.clusters['cluster_id'].tolist() == ['c0', 'c1', 'c2', 'c3']
    assert bundle.has('places') and not bundle.has('cells')
    assert bundle.nightlight_years == [2016]
    assert bundle.nightlight_year(2019) == 2016
    encoded = bundle.encode_assets()
    assert encoded.shape == (12, 10)
    assert np.all(encoded[:, 0] == np.tile([0., 1., 2.], 4))
    report = validate_bundle(bundle)
    assert report['clusters_per_year'] == {'2016': 2, '2019': 2}
    assert report['settlement']['urban'] == {'count': 2, 'share': 0.5}
    assert report['places_per_settlement'] == {'urban': 1, 'rural': 2}
    assert report['layers']['cells'] is None
    assert any('empty movements table' in warning for warning in report['warnings'])
    assert any('no nightlight pixels for survey year(s) [2019]' in warning for warning in report['warnings'])
    assert load_bundle(root_dir=str(tmp_path)).fingerprint() == bundle.fingerprint()


def test_schema_errors(tmp_path):
    layers, nightlight = make_tables()
    layers['clusters'].loc[1, 'lat'] = 95.
    layers['clusters'].loc[2, 'settlement'] = 'suburban'
    layers['households'].loc[4, 'water_source'] = 'river'
    fn = write_tables(str(tmp_path), layers, nightlight)
    with pytest.raises(BundleSchemaError) as exc:
        load_bundle(manifest=fn)
    errors = exc.value.errors
    assert all(isinstance(error, SchemaError) for error in errors)
    found = {(error.file, error.row) for error in errors}
    # header is line 1
    assert ('clusters.csv', 3) in found and ('clusters.csv', 4) in found and ('households.csv', 6) in found

    layers, nightlight = make_tables()
    layers['clusters'] = layers['clusters'].drop(columns='year')
    fn = write_tables(str(tmp_path / 'missing_column'), layers, nightlight)
    with pytest.raises(BundleSchemaError) as exc:
        load_bundle(manifest=fn)
    assert exc.value.errors[0].row is None and 'year' in exc.value.errors[0].reason


def test_references(tmp_path):
    layers, nightlight = make_tables()
    places = layers.pop('places')
    fn = write_tables(str(tmp_path / 'no_places'), layers, nightlight)
    with pytest.raises(MissingRequiredLayerError):
        load_bundle(manifest=fn)

    layers['places'] = places
    layers['households'].loc[0, 'cluster_id'] = 'c9'
    fn = write_tables(str(tmp_path / 'dangling'), layers, nightlight)
    with pytest.raises(DanglingReferenceError):
        load_bundle(manifest=fn)

    layers, nightlight = make_tables()
    layers['households'] = layers['households'][layers['households']['cluster_id'] != 'c3']
    with pytest.raises(DanglingReferenceError):
        validate_bundle(DatasetBundle('XX', layers, nightlight=nightlight))

    layers, nightlight = make_tables()
    layers['movement_tiles'] = pd.DataFrame({'tile_id': ['t0', 't1'], 'lat': [8., 8.1], 'lon': [-11., -11.1]})
    layers['movement_edges'] = pd.DataFrame({'tile_from': ['t0'], 'tile_to': ['t2'], 'count': [3.]})
    with pytest.raises(DanglingReferenceError):
        validate_bundle(DatasetBundle('XX', layers, nightlight=nightlight))


def test_write(tmp_path):
    layers, nightlight = make_tables()
    bundle = load_bundle(manifest=write_tables(str(tmp_path / 'a'), layers, nightlight))
    write_bundle(bundle, str(tmp_path / 'b'))
    bundle2 = load_bundle(root_dir=str(tmp_path / 'b'))
    assert bundle2.fingerprint() == bundle.fingerprint()
    assert bundle2.manifest() == bundle.manifest()
    layers['clusters'].loc[0, 'lat'] = 8.0001
    bundle3 = load_bundle(manifest=write_tables(str(tmp_path / 'c'), layers, nightlight))
    assert bundle3.fingerprint() != bundle.fingerprint()


def test_misc():
    assert np.isnan(encode_answers(['a', 'b', 'z'], ['a', 'b'])).tolist() == [False, False, True]
    assert encode_answers(['1', '2.5', ''], None)[:2].tolist() == [1., 2.5]
    assert settlement_of_kind(['city', 'hamlet', 'neighborhood', 'isolated_dwelling']).tolist() == ['urban', 'rural', 'urban', 'rural']


if __name__ == '__main__':

    setup_logging()
    import tempfile, pathlib
    for test in [test_load, test_schema_errors, test_references, test_write]:
        with tempfile.TemporaryDirectory() as tmp_dir:
            test(pathlib.Path(tmp_dir))
    test_misc()
