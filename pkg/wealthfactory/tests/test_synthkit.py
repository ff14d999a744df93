import os
import json

import numpy as np
import pytest

from wealthfactory import setup_logging
from wealthfactory.ingest import load_bundle, validate_bundle
from wealthfactory.groundtruth import compute_ground_truth
from wealthfactory.synthkit import (SynthSpec, RECORD_FILENAME, generate, bayes_nrmse, asset_levels, unit_asset_weights, orthogonal_noise,
                                    write_country, read_record, transfer_pair)


def small_spec(**kwargs):
    kwargs = {'n_clusters': 40, 'n_places': 60, 'households_per_cluster': 5, 'n_cities': 3,
              'lat_range': (8., 8.6), 'lon_range': (-11., -10.4), **kwargs}
    return SynthSpec(**kwargs)


def test_spec():
    spec = small_spec()
    assert spec.years == (2016, 2019)
    assert 'planted' not in spec.to_dict()
    with pytest.raises(ValueError):
        small_spec(n_clusters=5)
    with pytest.raises(ValueError):
        small_spec(urban_place_share=0.)
    with pytest.raises(ValueError):
        small_spec(urban_share=0.5, urban_place_share=1.)
    with pytest.raises(ValueError):
        small_spec(target_nrmse_mu=1.)
    with pytest.raises(ValueError):
        small_spec(households_per_cluster=1)


def test_assets():
    wealth = np.array([-3., 0., 0.4, 12.6, 45.2, 99.4, 100., 130.])
    levels = asset_levels(wealth)
    assert levels.shape == (8, 10)
    assert levels.min() >= 0 and levels.max() <= 10
    assert levels.sum(axis=1).tolist() == [0, 0, 0, 13, 45, 99, 100, 100]
    # each question is a monotonic cut
    assert np.all(np.diff(levels, axis=0) >= 0)
    weights = unit_asset_weights()
    assert weights['loadings'] == [1.] * 10 and weights['score_max'] == 100.

    rng = np.random.RandomState(seed=42)
    reference = rng.uniform(size=50)
    noise = orthogonal_noise(rng, reference)
    assert np.allclose(noise.mean(), 0., atol=1e-12) and np.allclose(noise.std(), 1.)
    assert np.allclose(noise.dot(reference - reference.mean()), 0., atol=1e-10)


def test_generate():
    spec = small_spec()
    bundle, record = generate(spec)
    assert len(bundle.clusters) == 40 and len(bundle.places) == 60
    assert len(bundle.households) == 40 * 5
    assert set(bundle.clusters['year']) == {2016, 2019}
    assert set(bundle.clusters['settlement']) == {'urban', 'rural'}
    report = validate_bundle(bundle)
    assert report['country_code'] == 'SYN'
    clusters = record['clusters']
    assert clusters['cluster_id'] == bundle.clusters['cluster_id'].tolist()
    mu, sigma = np.array(clusters['mu']), np.array(clusters['sigma'])
    assert np.all((mu >= 0.) & (mu <= 100.)) and np.all(sigma >= 0.)
    assert len(record['planted']['terms']) == 6

    # unit weights return household wealth to the nearest integer
    stats = compute_ground_truth(bundle)[0]
    assert np.median(np.abs(stats['mu'].to_numpy() - mu)) <= 0.5
    assert np.corrcoef(stats['mu'], mu)[0, 1] > 0.99

    bundle2, record2 = generate(spec)
    assert bundle2.fingerprint() == bundle.fingerprint()
    assert json.dumps(record2, sort_keys=True) == json.dumps(record, sort_keys=True)
    bundle3 = generate(spec, seed=1)[0]
    assert bundle3.fingerprint() != bundle.fingerprint()

    bundle, record = generate(small_spec(target_nrmse_mu=0.))
    assert record['eta_mu'] == 0.
    assert bayes_nrmse(record)[0] == 0.
    assert np.allclose(record['clusters']['mu'], np.clip(record['clusters']['f'], 0., 100.))

    bundle, record = generate(small_spec(urban_share=0., urban_place_share=0.))
    assert set(bundle.clusters['settlement']) == {'rural'}
    assert not bundle.has('embeddings')
    bundle = generate(small_spec(embeddings=True))[0]
    assert bundle.has('embeddings')


def test_write(tmp_path):
    spec = small_spec()
    bundle, record = write_country(spec, str(tmp_path))
    assert os.path.isfile(tmp_path / 'manifest.json')
    loaded = load_bundle(str(tmp_path))
    assert loaded.country_code == bundle.country_code
    assert loaded.iwi_weights == unit_asset_weights()
    assert np.allclose(compute_ground_truth(loaded)[0]['mu'], compute_ground_truth(bundle)[0]['mu'])
    record2 = read_record(tmp_path / RECORD_FILENAME)
    assert json.dumps(record2, sort_keys=True) == json.dumps(record, sort_keys=True)


def test_transfer_pair():
    spec = small_spec()
    (bundle_A, record_A), (bundle_B, record_B) = transfer_pair(spec)
    assert bundle_B.country_code == 'SYNB'
    assert record_B['planted'] == record_A['planted']
    low, high = np.quantile(record_A['clusters']['f'], [0.1, 0.9])
    f_B = np.array(record_B['clusters']['f'])
    assert len(f_B) == 40
    assert np.all((f_B >= low - 1e-9) & (f_B <= high + 1e-9))
    # narrow band: no clipping, the best normalized error is exact
    assert np.allclose(bayes_nrmse(record_B)[0], 0.2)


def test_bayes_nrmse():
    bundle, record = generate(small_spec(n_clusters=80))
    stats = compute_ground_truth(bundle)[0]
    optimal = bayes_nrmse(record, stats=stats)
    mu = stats.set_index('cluster_id').loc[record['clusters']['cluster_id'], 'mu'].to_numpy()
    assert np.allclose(optimal[0], record['eta_mu'] / np.std(mu))
    assert np.allclose(optimal[1], record['eta_sigma'] / np.std(stats['sigma']))
    # household rounding and clipping barely change the spread of mean wealth
    assert np.allclose(optimal[0], bayes_nrmse(record)[0], rtol=0.1)
    # row order of the statistics does not matter
    assert bayes_nrmse(record, stats=stats.iloc[::-1]) == optimal


if __name__ == '__main__':

    setup_logging()
    import tempfile, pathlib
    test_spec()
    test_assets()
    test_generate()
    with tempfile.TemporaryDirectory() as tmp_dir:
        test_write(pathlib.Path(tmp_dir))
    test_transfer_pair()
    test_bayes_nrmse()
