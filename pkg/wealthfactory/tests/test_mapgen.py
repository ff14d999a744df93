import json
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from wealthfactory import setup_logging, utils
from wealthfactory.ingest import DatasetBundle
from wealthfactory.features import LocationSet, assemble, standardize_per_year
from wealthfactory.gbrt import Hyperparams, fit
from wealthfactory.mapgen import PovertyMap, infer_places, render_scatter, scatter_limits, sample_households, DuplicatePlaceError


def make_bundle(nplaces=5):
    rng = np.random.RandomState(seed=42)
    n = 12
    clusters = pd.DataFrame({'cluster_id': ['c{:02d}'.format(i) for i in range(n)], 'lat': rng.uniform(0., 0.2, n), 'lon': rng.uniform(0., 0.2, n),
                             'year': [2016, 2019] * (n // 2), 'settlement': ['urban', 'rural', 'rural'] * (n // 3)})
    households = pd.DataFrame({'household_id': ['h{:02d}'.format(i) for i in range(n)], 'cluster_id': clusters['cluster_id']})
    places = pd.DataFrame({'place_id': ['p{:d}'.format(i) for i in range(nplaces)], 'lat': rng.uniform(0., 0.2, nplaces), 'lon': rng.uniform(0., 0.2, nplaces),
                           'kind': (['city', 'village'] * nplaces)[:nplaces]})
    tiles = pd.DataFrame({'lat': rng.uniform(0., 0.2, 50), 'lon': rng.uniform(0., 0.2, 50), 'population': rng.uniform(0., 1000., 50)})
    nightlight = {year: pd.DataFrame({'lat': rng.uniform(0., 0.2, 50), 'lon': rng.uniform(0., 0.2, 50), 'radiance': rng.uniform(0., 30., 50), 'year': year})
                  for year in [2016, 2019]}
    return DatasetBundle('XX', {'clusters': clusters, 'households': households, 'places': places, 'population_tiles': tiles}, nightlight=nightlight)


def make_model(bundle):
    matrix = standardize_per_year(assemble(LocationSet.from_clusters(bundle.clusters), bundle))
    matrix = matrix.select_sources(['population', 'nightlight', 'settlement'])
    pop = matrix.values[:, matrix.names.index('pop_total_population_within_2km')]
    Y = np.column_stack([np.clip(20. + pop / 100., 0., 100.), 5. + matrix.values[:, -1]])
    return fit(matrix, Y, hp=Hyperparams(n_trees=5, max_depth=2, min_samples_leaf=2))


def test_infer(tmp_path):
    bundle = make_bundle()
    model = make_model(bundle)
    poverty_map = infer_places(model, bundle)
    assert poverty_map.size == 5
    assert poverty_map.place_ids.tolist() == ['p0', 'p1', 'p2', 'p3', 'p4']
    assert poverty_map.settlement.tolist() == ['urban', 'rural', 'urban', 'rural', 'urban']
    assert np.all((poverty_map.mu >= 0.) & (poverty_map.mu <= 100.)) and np.all(poverty_map.sigma >= 0.)
    assert poverty_map.model_fingerprint == utils.digest(model.to_json())
    matrix = assemble(LocationSet.from_places(bundle.places, 2019), bundle)
    assert np.array_equal(poverty_map.population, matrix.values[:, matrix.names.index('pop_total_population_within_1.6km')], equal_nan=True)
    assert np.array_equal(infer_places(model, bundle, year=2019).mu, poverty_map.mu)

    places = pd.concat([bundle.places, bundle.places.iloc[:1]], ignore_index=True)
    duplicated = DatasetBundle('XX', {**bundle.layers, 'places': places}, nightlight=bundle.nightlight)
    with pytest.raises(DuplicatePlaceError):
        infer_places(model, duplicated)


def test_export(tmp_path):
    poverty_map = PovertyMap(['a', 'b', 'c'], [8., 8.5, 9.], [-11., -11.5, -12.], ['urban', 'rural', 'rural'], [60., 30., 25.], [12., 8., 6.],
                             population=[1000., np.nan, 50.], model_fingerprint='abc')
    document = poverty_map.to_geojson()
    assert document['type'] == 'FeatureCollection' and len(document['features']) == 3
    feature = document['features'][0]
    assert feature['id'] == 'a'
    assert feature['geometry'] == {'type': 'Point', 'coordinates': [-11., 8.]}
    assert feature['properties'] == {'mu': 60., 'sigma': 12., 'settlement': 'urban', 'population': 1000.}
    assert document['features'][1]['properties']['population'] is None
    fn = str(tmp_path / 'map.geojson')
    poverty_map.write_geojson(fn)
    poverty_map2 = PovertyMap.read_geojson(fn)
    assert json.dumps(poverty_map2.to_geojson(), sort_keys=True) == json.dumps(document, sort_keys=True)
    fn = str(tmp_path / 'map.csv')
    poverty_map.write_csv(fn)
    frame = PovertyMap.read_csv(fn).to_frame()
    pd.testing.assert_frame_equal(frame, poverty_map.to_frame())
    # floats come back bit-identical
    rng = np.random.RandomState(seed=42)
    lat, lon, mu, sigma = rng.uniform(7., 10., 50), rng.uniform(-13., -10., 50), rng.uniform(0., 100., 50), rng.uniform(0., 30., 50)
    poverty_map = PovertyMap(['p{:d}'.format(i) for i in range(50)], lat, lon, ['rural'] * 50, mu, sigma)
    poverty_map.write_csv(fn)
    frame = PovertyMap.read_csv(fn).to_frame()
    for name, value in zip(['lat', 'lon', 'mu', 'sigma'], [lat, lon, mu, sigma]):
        assert np.array_equal(frame[name].to_numpy(), value)

    empty = PovertyMap([], [], [], [], [], [])
    assert empty.to_geojson()['features'] == []
    assert PovertyMap.from_geojson(json.dumps(empty.to_geojson())).size == 0
    with pytest.raises(ValueError):
        PovertyMap.from_geojson({'type': 'Feature'})

    households = sample_households(poverty_map, n=25, seed=1)
    assert len(households) == 75
    assert households['iwi'].between(0., 100.).all()
    assert households['place_id'].tolist()[:25] == ['a'] * 25
    assert households.equals(sample_households(poverty_map, n=25, seed=1))


def find_group(root, gid):
    for element in root.iter():
        if element.tag.endswith('}g') and element.get('id') == gid:
            return element
    return None


def test_scatter(tmp_path):
    assert np.allclose(scatter_limits([0., 10.]), (-0.5, 10.5))
    assert np.allclose(scatter_limits([5., 5.]), (4.75, 5.25))

    rng = np.random.RandomState(seed=42)
    mu = rng.uniform(0., 100., 30)
    sigma = 5. + 0.2 * mu - 0.001 * mu**2
    settlement = np.array(['urban'] * 10 + ['rural'] * 20)
    fn = str(tmp_path / 'scatter.svg')
    svg = render_scatter(mu, sigma, settlement, filename=fn)
    with open(fn, 'r') as file:
        assert file.read() == svg
    assert svg == render_scatter(pd.DataFrame({'mu': mu, 'sigma': sigma, 'settlement': settlement}))
    root = ET.fromstring(svg.encode('utf-8'))
    for name, size in [('urban', 10), ('rural', 20)]:
        group = find_group(root, 'points-{}'.format(name))
        assert group is not None
        assert sum(element.tag.endswith('}use') for element in group.iter()) == size
        assert find_group(root, 'fit-{}'.format(name)) is not None
    assert find_group(root, 'points-all') is None

    svg = render_scatter(mu, sigma)
    assert find_group(ET.fromstring(svg.encode('utf-8')), 'points-all') is not None
    with pytest.raises(ValueError):
        render_scatter([], [])


if __name__ == '__main__':

    setup_logging()
    import tempfile, pathlib
    for test in [test_infer, test_export, test_scatter]:
        with tempfile.TemporaryDirectory() as tmp_dir:
            test(pathlib.Path(tmp_dir))
