import os
import json

import pandas as pd

from wealthfactory import utils, pipeline
from wealthfactory.cli import dispatch, RUN_MANIFEST


def run(capsys, *argv):
    capsys.readouterr()
    status = dispatch([str(arg) for arg in argv])
    captured = capsys.readouterr()
    return status, (json.loads(captured.out) if status == 0 and captured.out.strip() else None), captured.err


def test_usage(tmp_path, capsys):
    status, summary, err = run(capsys, 'bogus')
    assert status == 2
    status, summary, err = run(capsys)
    assert status == 2 and json.loads(err.strip().splitlines()[-1])['error'] == 'UsageError'
    status, summary, err = run(capsys, 'validate', '-o', tmp_path / 'run')
    assert status == 2 and 'manifest' in err
    status, summary, err = run(capsys, 'train', '--manifest', tmp_path / 'none.json', '--recency', 'XX', '-o', tmp_path / 'run')
    assert status == 2
    config = tmp_path / 'config.json'
    utils.write_json(config, {'unknown_key': 1})
    status, summary, err = run(capsys, 'validate', '--config', config)
    assert status == 2 and 'unknown_key' in err

    rundir = tmp_path / 'bad'
    rundir.mkdir()
    pd.DataFrame({'run': [0], 'cluster_id': ['c']}).to_csv(rundir / 'predictions.csv', index=False)
    status, summary, err = run(capsys, 'evaluate', '--run', rundir, '-o', tmp_path / 'run')
    assert status == 1 and json.loads(err.strip().splitlines()[-1])['error'] == 'KeyError'


def test_run(tmp_path, capsys, monkeypatch):
    monkeypatch.setitem(pipeline.SEARCH_PROFILES, 'ci', dict(n_candidates=2, n_folds=2, n_runs=1,
                                                             distributions={'n_trees': [10], 'max_depth': [2], 'learning_rate': [0.2]}))
    country = tmp_path / 'country'
    status, summary, err = run(capsys, 'synth', '--n-clusters', 150, '--n-places', 60, '--country-code', 'ZZ', '--seed', 1, '-o', country)
    assert status == 0, err
    assert summary['country_code'] == 'ZZ' and summary['n_clusters'] == 150
    assert 0. < summary['bayes_nrmse_mu'] < 1.
    manifest = country / 'manifest.json'
    assert os.path.isfile(manifest) and os.path.isfile(country / 'synth_record.json')

    output = tmp_path / 'run'
    status, summary, err = run(capsys, 'validate', '--manifest', manifest, '-o', output)
    assert status == 0, err
    assert summary['country_code'] == 'ZZ'
    status, summary, err = run(capsys, 'iwi', '--manifest', manifest, '-o', output)
    assert status == 0, err
    stats = pd.read_csv(output / 'cluster_stats.csv')
    assert len(stats) == 150 and stats['mu'].between(0., 100.).all()
    status, summary, err = run(capsys, 'relocate', '--manifest', manifest, '--relocation', 'ruc', '-o', output)
    assert status == 0, err
    assert summary['mode'] == 'ruc'

    status, summary, err = run(capsys, 'train', '--manifest', manifest, '--sources', 'population,nightlight', '--weights', 'ens', '-o', output)
    assert status == 0, err
    assert summary['fingerprint']['sources'] == ['population', 'nightlight']
    for name in ['model_card.json', 'model.json', 'predictions.csv', 'importance.csv', 'importance_sources.json']:
        assert os.path.isfile(output / name)
    predictions = pd.read_csv(output / 'predictions.csv')
    assert set(predictions['run']) == {0}

    status, summary, err = run(capsys, 'evaluate', '-o', output)
    assert status == 0, err
    assert set(summary) >= {'eps_mu', 'eps_sigma'}
    assert os.path.isfile(output / 'intersection_mean.csv') and os.path.isfile(output / 'variability.csv')

    status, summary, err = run(capsys, 'infer', '--manifest', manifest, '--households', 3, '-o', output)
    assert status == 0, err
    assert summary['n_places'] == 60
    assert len(pd.read_csv(output / 'households.csv')) == 180
    with open(output / 'poverty_map.geojson', 'r') as file:
        assert len(json.load(file)['features']) == 60
    assert os.path.isfile(output / 'scatter.svg')

    status, summary, err = run(capsys, 'report', '--runs', output, '-o', output)
    assert status == 0, err
    assert summary['n_cards'] == 1 and summary['runs'] == ['run']
    assert os.path.isfile(output / 'report' / 'metrics_table.csv')

    run_manifest = utils.read_json(output / RUN_MANIFEST)
    assert set(run_manifest['commands']) == {'validate', 'iwi', 'relocate', 'train', 'evaluate', 'infer', 'report'}
    assert 'model.json' in run_manifest['commands']['train']['files']
    assert run_manifest['commands']['train']['config']['sources'] == ['population', 'nightlight']
