import numpy as np
import pandas as pd
import pytest

from wealthfactory import setup_logging
from wealthfactory.ingest import DatasetBundle, DEFAULT_ASSET_COLUMNS
from wealthfactory.groundtruth import (AssetMatrix, AssetWeights, compute_asset_weights, compute_iwi, aggregate_clusters, compute_ground_truth,
                                       RelocationPlan, relocate, gini, discretize_equal_width, summarize_ground_truth,
                                       DegenerateMatrixError, WeightDimensionMismatchError, AllZeroError, KEEP_NOISY)


def test_asset_weights():
    x = np.arange(6.)
    m = AssetMatrix(np.column_stack([x, 2. * x + 1., np.full_like(x, 3.)]), ['a', 'b', 'c'])
    weights = compute_asset_weights(m)
    assert np.allclose(weights.loadings, [np.sqrt(0.5), np.sqrt(0.5), 0.])
    assert np.allclose(weights.explained_variance, 1.)

    rng = np.random.RandomState(seed=42)
    values = rng.normal(size=(5, 10))
    weights = compute_asset_weights(AssetMatrix(values, list('abcdefghij')))
    eigenvalues, eigenvectors = np.linalg.eigh(np.corrcoef(values, rowvar=False))
    ref = eigenvectors[:, -1]
    if ref.sum() < 0.: ref = -ref
    assert weights.loadings.sum() > 0.
    assert np.allclose(weights.loadings, ref, atol=1e-8)
    assert np.allclose(np.sum(weights.loadings**2), 1.)

    with pytest.raises(DegenerateMatrixError):
        compute_asset_weights(AssetMatrix(np.ones((4, 2)), ['a', 'b']))
    with pytest.raises(DegenerateMatrixError):
        compute_asset_weights(AssetMatrix(np.ones((1, 2)), ['a', 'b']))
    with pytest.raises(WeightDimensionMismatchError):
        AssetMatrix(np.ones((4, 3)), ['a', 'b'])


def test_iwi():
    values = np.array([[0., 0., 0.], [1., 1., 0.], [1., 1., 1.], [2., 2., 1.], [2., 2., 2.], [1., 1., 1.]])
    m = AssetMatrix(values, ['a', 'b', 'c'], bounds=[[0., 2.]] * 3)
    for rescale in ['bundle', 'domain']:
        weights = compute_asset_weights(m, rescale=rescale)
        assert np.all(weights.loadings > 0.)
        iwi = compute_iwi(m, weights)
        assert np.all((iwi >= 0.) & (iwi <= 100.))
        assert np.allclose(iwi[[0, 4]], [0., 100.])
        assert iwi[2] == iwi[5]
    weights = compute_asset_weights(m)
    assert np.allclose(compute_iwi(values, weights.to_state()), compute_iwi(m, AssetWeights.from_state(weights.to_state())))
    with pytest.raises(WeightDimensionMismatchError):
        compute_iwi(values[:, :2], weights)


def test_aggregate():
    clusters = pd.DataFrame({'cluster_id': ['a', 'b', 'c'], 'lat': [0., 1., 2.], 'lon': [0., 1., 2.],
                             'year': [2016] * 3, 'settlement': ['urban', 'rural', 'rural']})
    stats = aggregate_clusters([10., 0., 10., 100., 50.], ['a', 'b', 'a', 'b', 'c'], clusters)
    assert stats['cluster_id'].tolist() == ['a', 'b', 'c']
    assert np.allclose(stats['mu'], [10., 50., 50.])
    assert np.allclose(stats['sigma'], [0., 50., 0.])
    assert stats['n_households'].tolist() == [2, 2, 1]


def make_bundle():
    clusters = pd.DataFrame({'cluster_id': ['c0', 'c1'], 'lat': [8., 8.1], 'lon': [-11., -11.1], 'year': [2016, 2016], 'settlement': ['urban', 'rural']})
    rows = []
    for cluster_id, answers in [('c0', [1] * 10), ('c0', [3] * 10), ('c1', [0] * 10), ('c1', [2] * 10)]:
        row = {'household_id': 'h{:d}'.format(len(rows)), 'cluster_id': cluster_id}
        row.update({column: str(answer) for column, answer in zip(DEFAULT_ASSET_COLUMNS, answers)})
        rows.append(row)
    places = pd.DataFrame({'place_id': ['p0'], 'lat': [8.], 'lon': [-11.], 'kind': ['town']})
    return DatasetBundle('XX', {'clusters': clusters, 'households': pd.DataFrame(rows), 'places': places})


def test_ground_truth():
    bundle = make_bundle()
    unit = {'loadings': [1.] * 10, 'means': [0.] * 10, 'stds': [1.] * 10, 'score_min': 0., 'score_max': 100.}
    stats, weights, iwi = compute_ground_truth(bundle, weights=unit)
    assert np.allclose(iwi, [10., 30., 0., 20.])
    assert np.allclose(stats['mu'], [20., 10.])
    assert np.allclose(stats['sigma'], [10., 10.])
    stats, weights, iwi = compute_ground_truth(bundle)
    assert np.allclose(iwi, [100. / 3., 100., 0., 200. / 3.])
    summary = summarize_ground_truth(stats, places=bundle.places, plan=relocate(stats, bundle.places, mode='none'))
    assert summary['n_clusters'] == 2
    assert summary['settlement']['urban'] == {'count': 1, 'share': 0.5}
    assert summary['places_per_settlement'] == {'urban': 1, 'rural': 0}
    assert summary['relocated']['rural']['count'] == 0


def test_relocate(tmp_path):
    # A reaches P1 only, B reaches P1 (closer) and P2
    clusters = pd.DataFrame({'cluster_id': ['A', 'B'], 'lat': [0., 0.], 'lon': [0., 0.1], 'settlement': ['rural', 'rural']})
    places = pd.DataFrame({'place_id': ['P1', 'P2'], 'lat': [0., 0.], 'lon': [0.05, 0.16], 'kind': ['village', 'hamlet']})
    plan = relocate(clusters, places, mode='ruc')
    assert plan.assignments == {'A': 'P1', 'B': 'P2'}
    assert plan.counts(clusters['settlement']) == {'urban': 0, 'rural': 2}
    moved = plan.apply(clusters, places)
    assert np.allclose(moved['lon'], [0.05, 0.16])
    assert moved['location_id'].tolist() == ['P1', 'P2']

    assert set(relocate(clusters, places, mode='none').assignments.values()) == {KEEP_NOISY}
    far = pd.DataFrame({'cluster_id': ['A', 'U'], 'lat': [1., 0.], 'lon': [1., 0.05], 'settlement': ['rural', 'urban']})
    plan = relocate(far, places, mode='rc')
    assert plan.assignments == {'A': KEEP_NOISY, 'U': KEEP_NOISY}
    moved = plan.apply(far, places)
    assert moved['location_id'].tolist() == ['A', 'U'] and not moved['relocated'].any()

    rng = np.random.RandomState(seed=42)
    ncluster, nplace = 60, 80
    clusters = pd.DataFrame({'cluster_id': ['c{:02d}'.format(i) for i in range(ncluster)], 'lat': rng.uniform(8., 8.5, ncluster),
                             'lon': rng.uniform(-11., -10.5, ncluster), 'settlement': rng.choice(['urban', 'rural'], ncluster)})
    places = pd.DataFrame({'place_id': ['p{:02d}'.format(i) for i in range(nplace)], 'lat': rng.uniform(8., 8.5, nplace),
                           'lon': rng.uniform(-11., -10.5, nplace), 'kind': rng.choice(['city', 'village'], nplace)})
    plan = relocate(clusters, places, mode='ruc')
    assigned = plan.place_ids[plan.relocated]
    assert len(set(assigned.tolist())) == assigned.size
    kinds = places.set_index('place_id')['kind']
    for cluster_settlement, place_id, distance in zip(clusters['settlement'][plan.relocated], assigned, plan.distances[plan.relocated]):
        assert (kinds[place_id] == 'city') == (cluster_settlement == 'urban')
        assert distance <= (2. if cluster_settlement == 'urban' else 10.)
    plan2 = relocate(clusters.iloc[::-1], places, mode='ruc')
    assert plan2.assignments == plan.assignments
    fn = str(tmp_path / 'relocation.csv')
    plan.write_csv(fn)
    plan3 = RelocationPlan.read_csv(fn, mode='ruc')
    assert plan3.assignments == plan.assignments
    assert np.allclose(plan3.distances, plan.distances, equal_nan=True)


def test_gini():
    assert gini([3., 3., 3.]) == 0.
    assert np.allclose(gini([0., 100.]), 0.5)
    values = np.random.RandomState(seed=42).uniform(0., 100., 50)
    ref = np.sum(np.abs(values[:, None] - values[None, :])) / (2 * values.size**2 * values.mean())
    assert np.allclose(gini(values), ref)
    with pytest.raises(AllZeroError):
        gini([0., 0.])


def test_discretize():
    values = np.linspace(0., 100., 11)
    bins = discretize_equal_width(values, k=10)
    assert bins[5] == 5 and bins[-1] == 9 and bins[0] == 0
    assert np.all(discretize_equal_width([4., 4., 4.]) == 0)
    with pytest.raises(ValueError):
        discretize_equal_width(values, k=1)


if __name__ == '__main__':

    setup_logging()
    import tempfile, pathlib
    test_asset_weights()
    test_iwi()
    test_aggregate()
    test_ground_truth()
    with tempfile.TemporaryDirectory() as tmp_dir:
        test_relocate(pathlib.Path(tmp_dir))
    test_gini()
    test_discretize()
