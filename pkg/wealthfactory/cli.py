"""
Command line interface: ``wealthfactory <command> [options]``.

Commands: validate, iwi, relocate, features, train, evaluate, infer, transfer, synth, report.
Options are read from a JSON configuration file (``--config``) and overridden by flags.
All outputs go to one run directory, listed in its ``run_manifest.json``.
"""

import os
import sys
import logging
import argparse
import json
import datetime
from dataclasses import dataclass, asdict, fields

import pandas as pd

from . import utils, pipeline, evalreport, mapgen, synthkit
from ._version import __version__
from .ingest import load_bundle, validate_bundle
from .groundtruth import compute_ground_truth, relocate, summarize_ground_truth, RELOCATION_MODES
from .features import FeatureConfig, SOURCES
from .gbrt import GBRTEnsemble


logger = logging.getLogger('CLI')


COMMANDS = ('validate', 'iwi', 'relocate', 'features', 'train', 'evaluate', 'infer', 'transfer', 'synth', 'report')
RUN_MANIFEST = 'run_manifest.json'


class UsageError(ValueError):

    """Error raised on invalid command line usage or configuration."""


@dataclass
class RunConfig:
    """Run configuration; paths in a configuration file are relative to that file."""

    manifest: str = None
    recency: str = 'ON'
    oldest_year: int = None
    newest_year: int = None
    relocation: str = 'none'
    weights: str = 'none'
    beta: float = 0.9
    profile: str = 'ci'
    seed: int = 0
    output: str = 'run'
    sources: list = None
    joint: bool = True
    rescale: str = 'bundle'

    def __post_init__(self):
        try:
            pipeline.RecencyConfig(self.recency)
            pipeline.WeightConfig(self.weights, beta=self.beta)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if self.relocation not in RELOCATION_MODES:
            raise UsageError('relocation must be one of {}, found {}'.format(RELOCATION_MODES, self.relocation))
        if self.profile not in pipeline.SEARCH_PROFILES:
            raise UsageError('profile must be one of {}, found {}'.format(list(pipeline.SEARCH_PROFILES), self.profile))
        if self.rescale not in ('bundle', 'domain'):
            raise UsageError('rescale must be bundle or domain, found {}'.format(self.rescale))
        if isinstance(self.sources, str):
            self.sources = [source.strip() for source in self.sources.split(',') if source.strip()]
        if self.sources is not None:
            unknown = [source for source in self.sources if source not in SOURCES]
            if unknown:
                raise UsageError('unknown source(s) {}, choices are {}'.format(unknown, list(SOURCES)))

    @classmethod
    def read_file(cls, filename):
        """Read configuration from JSON ``filename``."""
        if not os.path.isfile(filename):
            raise UsageError('configuration file {} not found'.format(filename))
        config = utils.read_json(filename)
        unknown = [key for key in config if key not in [f.name for f in fields(cls)]]
        if unknown:
            raise UsageError('unknown configuration key(s) {}'.format(unknown))
        dirname = os.path.dirname(os.path.abspath(filename))
        for key in ['manifest', 'output']:
            if config.get(key, None) is not None and not os.path.isabs(config[key]):
                config[key] = os.path.join(dirname, config[key])
        return config

    def recency_config(self):
        return pipeline.RecencyConfig(self.recency, self.oldest_year, self.newest_year)

    def weight_config(self):
        return pipeline.WeightConfig(self.weights, beta=self.beta)

    def search_spec(self):
        return pipeline.SearchSpec.profile(self.profile, seed=self.seed)

    def to_dict(self):
        return asdict(self)


class ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        raise UsageError(message)


def make_parser():
    """Return the command line parser."""
    parser = ArgumentParser(prog='wealthfactory', description='Poverty maps from survey clusters and geospatial layers.')
    parser.add_argument('--version', action='version', version='%(prog)s {}'.format(__version__))
    subparsers = parser.add_subparsers(dest='command', metavar='command')

    def add(name, help):
        sub = subparsers.add_parser(name, help=help)
        sub.add_argument('--config', type=str, default=None, help='JSON configuration file')
        sub.add_argument('--output', '--out', '-o', dest='output', type=str, default=None, help='run directory')
        sub.add_argument('--seed', type=int, default=None, help='random seed')
        sub.add_argument('--log-level', type=str, default='info', choices=['debug', 'info', 'warning', 'error'])
        return sub

    def add_bundle(sub):
        sub.add_argument('--manifest', type=str, default=None, help='bundle manifest (JSON file)')

    def add_training(sub):
        sub.add_argument('--recency', type=str, default=None, help='OO, NN, O-N or ON')
        sub.add_argument('--oldest-year', dest='oldest_year', type=int, default=None)
        sub.add_argument('--newest-year', dest='newest_year', type=int, default=None)
        sub.add_argument('--weights', type=str, default=None, help='sample weights: none or ens')
        sub.add_argument('--beta', type=float, default=None, help='ENS beta')
        sub.add_argument('--profile', type=str, default=None, help='search profile: ci or full')
        sub.add_argument('--no-joint', dest='joint', action='store_const', const=False, default=None, help='fit mean and standard deviation separately')

    def add_relocation(sub):
        sub.add_argument('--relocation', type=str, default=None, help='none, rc or ruc')

    def add_sources(sub):
        sub.add_argument('--sources', type=str, default=None, help='comma-separated feature sources')

    sub = add('validate', 'validate a bundle')
    add_bundle(sub)
    sub = add('iwi', 'compute household IWI and cluster statistics')
    add_bundle(sub)
    sub.add_argument('--rescale', type=str, default=None, help='IWI rescaling: bundle or domain')
    sub = add('relocate', 'relocate clusters to populated places')
    add_bundle(sub)
    add_relocation(sub)
    sub = add('features', 'compute cluster features')
    add_bundle(sub)
    add_relocation(sub)
    add_sources(sub)
    sub = add('train', 'train and evaluate models')
    add_bundle(sub)
    add_relocation(sub)
    add_sources(sub)
    add_training(sub)
    sub = add('evaluate', 'evaluate persisted test predictions')
    sub.add_argument('--run', type=str, default=None, help='run directory with predictions.csv, defaults to the output directory')
    sub = add('infer', 'predict wealth at populated places')
    add_bundle(sub)
    sub.add_argument('--model', type=str, default=None, help='model file, defaults to model.json in the output directory')
    sub.add_argument('--year', type=int, default=None, help='nightlight year of places')
    sub.add_argument('--households', type=int, default=0, help='number of synthetic households to draw per place')
    sub = add('transfer', 'train in two countries and evaluate across')
    add_bundle(sub)
    sub.add_argument('--manifest-b', dest='manifest_b', type=str, required=True, help='bundle manifest of the second country')
    sub.add_argument('--keep-sources', dest='keep_sources', type=str, default=None, help='sources kept on the evaluation country')
    add_relocation(sub)
    add_sources(sub)
    add_training(sub)
    sub = add('synth', 'generate a synthetic country')
    sub.add_argument('--n-clusters', dest='n_clusters', type=int, default=None)
    sub.add_argument('--n-places', dest='n_places', type=int, default=None)
    sub.add_argument('--urban-share', dest='urban_share', type=float, default=None)
    sub.add_argument('--target-nrmse', dest='target_nrmse_mu', type=float, default=None)
    sub.add_argument('--country-code', dest='country_code', type=str, default=None)
    sub.add_argument('--embeddings', action='store_const', const=True, default=None)
    sub = add('report', 'regenerate tables from persisted runs')
    sub.add_argument('--runs', nargs='+', default=None, help='run directories')
    return parser


def make_config(args):
    """Merge configuration file and command line flags into :class:`RunConfig`."""
    config = RunConfig.read_file(args.config) if args.config else {}
    for field_ in fields(RunConfig):
        value = getattr(args, field_.name, None)
        if value is not None: config[field_.name] = value
    return RunConfig(**config)


def _require_manifest(config, manifest=None):
    manifest = manifest or config.manifest
    if manifest is None:
        raise UsageError('a bundle manifest is required (--manifest or configuration key manifest)')
    if not os.path.isfile(manifest):
        raise UsageError('bundle manifest {} not found'.format(manifest))
    return load_bundle(manifest=manifest)


class RunDirectory(object):
    """Output directory; keeps the list of files written by the current command."""

    def __init__(self, path):
        self.path = str(path)
        utils.mkdir(self.path)
        self.files = []

    def __call__(self, *names):
        filename = os.path.join(self.path, *names)
        utils.mkdir(os.path.dirname(filename))
        self.files.append(os.path.relpath(filename, self.path))
        return filename

    def write_json(self, name, obj):
        utils.write_json(self(name), obj)

    def write_manifest(self, command, config):
        """Add entry of ``command`` to the run manifest; the only place a timestamp is written."""
        filename = os.path.join(self.path, RUN_MANIFEST)
        manifest = utils.read_json(filename) if os.path.isfile(filename) else {'version': __version__, 'commands': {}}
        manifest['commands'][command] = {'config': config.to_dict(), 'files': sorted(set(self.files)),
                                         'timestamp': datetime.datetime.now(datetime.timezone.utc).isoformat()}
        utils.write_json(filename, manifest)


def cmd_validate(config, args, out):
    bundle = _require_manifest(config)
    report = validate_bundle(bundle)
    out.write_json('validation.json', report)
    return {'country_code': bundle.country_code, 'clusters_per_year': report['clusters_per_year'], 'warnings': len(report['warnings'])}


def cmd_iwi(config, args, out):
    bundle = _require_manifest(config)
    stats, weights, iwi = compute_ground_truth(bundle, rescale=config.rescale)
    out.write_json('iwi_weights.json', weights.to_state())
    stats.to_csv(out('cluster_stats.csv'), index=False)
    pd.DataFrame({'household_id': bundle.households['household_id'], 'cluster_id': bundle.households['cluster_id'], 'iwi': iwi}).to_csv(out('household_iwi.csv'), index=False)
    summary = summarize_ground_truth(stats, places=bundle.places)
    out.write_json('ground_truth_summary.json', summary)
    return summary


def cmd_relocate(config, args, out):
    bundle = _require_manifest(config)
    stats = compute_ground_truth(bundle, rescale=config.rescale)[0]
    plan = relocate(stats, bundle.places, mode=config.relocation)
    plan.write_csv(out('relocation.csv'))
    summary = summarize_ground_truth(stats, places=bundle.places, plan=plan)
    out.write_json('relocation_summary.json', summary)
    return {'mode': config.relocation, 'relocated': plan.counts(stats['settlement'].to_numpy())}


def cmd_features(config, args, out):
    bundle = _require_manifest(config)
    dataset = pipeline.prepare_dataset(bundle, relocation_mode=config.relocation, sources=config.sources, rescale=config.rescale)
    dataset.features.to_csv(out('features.csv'))
    out.files.append('features.csv.manifest.json')
    dataset.stats.to_csv(out('cluster_stats.csv'), index=False)
    dataset.plan.write_csv(out('relocation.csv'))
    return {'shape': list(dataset.features.shape), 'sources': dataset.features.source_counts()}


def _train(config, bundle, out, prefix=''):
    dataset = pipeline.prepare_dataset(bundle, relocation_mode=config.relocation, sources=config.sources, rescale=config.rescale)
    card, model, predictions = pipeline.train_final(None, recency=config.recency_config(), relocation_mode=config.relocation,
                                                    weights=config.weight_config(), spec=config.search_spec(), joint=config.joint, dataset=dataset)
    card.save(out(prefix, 'model_card.json'))
    model.save(out(prefix, 'model.json'))
    predictions.to_csv(out(prefix, 'predictions.csv'), index=False)
    importance = model.importance()
    importance.to_frame().to_csv(out(prefix, 'importance.csv'), index=False)
    out.write_json(os.path.join(prefix, 'importance_sources.json'), importance.per_source(dataset.features.sources))
    return dataset, card, model, predictions


def cmd_train(config, args, out):
    bundle = _require_manifest(config)
    card = _train(config, bundle, out)[1]
    return {'fingerprint': card.fingerprint, 'mean_metrics': card.mean_metrics}


def _read_predictions(dirname):
    filename = os.path.join(dirname, 'predictions.csv')
    if not os.path.isfile(filename):
        raise UsageError('no predictions.csv in {}'.format(dirname))
    return pd.read_csv(filename, dtype={'cluster_id': str}, float_precision='round_trip')


def evaluate_predictions(predictions, out, prefix=''):
    """Write metrics, intersection tables and variability of a predictions table; return metrics."""
    runs = []
    variability = []
    for run, group in predictions.groupby('run', sort=True):
        Y_true, Y_pred = group[['mu', 'sigma']].to_numpy(), group[['mu_pred', 'sigma_pred']].to_numpy()
        runs.append({'run': int(run), **evalreport.evaluate(Y_true, Y_pred).to_dict()})
        for kind, mu, sigma in [('true', group['mu'], group['sigma']), ('predicted', group['mu_pred'], group['sigma_pred'])]:
            frame = evalreport.variability(mu, sigma, group['settlement']).to_frame()
            frame.insert(0, 'values', kind)
            frame.insert(0, 'run', int(run))
            variability.append(frame)
    metrics = {'runs': runs, 'mean': pipeline.mean_metrics([{k: v for k, v in run.items() if k != 'run'} for run in runs])}
    utils.write_json(out(prefix, 'metrics.json'), metrics)
    for name, table in evalreport.intersection_tables(predictions).items():
        table.write_csv(out(prefix, 'intersection_{}.csv'.format(name if name == 'mean' else 'run{:d}'.format(name))))
    evalreport.write_table(pd.concat(variability, ignore_index=True), out(prefix, 'variability.csv'))
    return metrics


def cmd_evaluate(config, args, out):
    predictions = _read_predictions(args.run or config.output)
    return evaluate_predictions(predictions, out)['mean']


def cmd_infer(config, args, out):
    bundle = _require_manifest(config)
    model_filename = args.model or os.path.join(config.output, 'model.json')
    if not os.path.isfile(model_filename):
        raise UsageError('model file {} not found'.format(model_filename))
    model = GBRTEnsemble.load(model_filename)
    poverty_map = mapgen.infer_places(model, bundle, cfg=FeatureConfig(), year=args.year)
    poverty_map.write_geojson(out('poverty_map.geojson'))
    poverty_map.write_csv(out('poverty_map.csv'))
    mapgen.render_scatter(poverty_map, filename=out('scatter.svg'))
    evalreport.write_table(evalreport.population_report(poverty_map), out('population_report.csv'))
    if args.households:
        mapgen.sample_households(poverty_map, n=args.households, seed=config.seed).to_csv(out('households.csv'), index=False)
    frame = poverty_map.to_frame()
    return {'n_places': poverty_map.size, 'mean_mu': frame.groupby('settlement')['mu'].mean().to_dict()}


def cmd_transfer(config, args, out):
    bundles = [_require_manifest(config), _require_manifest(config, manifest=args.manifest_b)]
    models, tests, countries = [], [], []
    for label, bundle in zip(['A', 'B'], bundles):
        dataset, card, model, predictions = _train(config, bundle, out, prefix=label)
        last = predictions[predictions['run'] == predictions['run'].max()]
        tests.append((dataset.features.loc(last['cluster_id'].tolist()), last[['mu', 'sigma']].to_numpy()))
        models.append(model)
        countries.append(bundle.country_code or label)
    if countries[0] == countries[1]: countries = [countries[0] + '_A', countries[1] + '_B']
    keep_sources = [source.strip() for source in args.keep_sources.split(',')] if args.keep_sources else None
    matrix = evalreport.transfer(models[0], models[1], tests[0], tests[1], countries=tuple(countries), keep_sources=keep_sources)
    frame = matrix.to_frame()
    evalreport.write_table(frame, out('transfer.csv'))
    return {'{}->{}'.format(row['train'], row['test']): {'eps_mu': row['eps_mu'], 'eps_sigma': row['eps_sigma']} for row in frame.to_dict('records')}


def cmd_synth(config, args, out):
    kwargs = {'seed': config.seed}
    for name in ['n_clusters', 'n_places', 'urban_share', 'target_nrmse_mu', 'country_code', 'embeddings']:
        value = getattr(args, name, None)
        if value is not None: kwargs[name] = value
    bundle, record = synthkit.write_country(synthkit.SynthSpec(**kwargs), out.path)
    out.files += ['manifest.json', synthkit.RECORD_FILENAME] + list(bundle.manifest()['layers'].values()) + list(bundle.manifest()['nightlight'].values())
    optimal = synthkit.bayes_nrmse(record, stats=compute_ground_truth(bundle)[0])
    return {'country_code': bundle.country_code, 'n_clusters': len(bundle.clusters), 'bayes_nrmse_mu': optimal[0], 'bayes_nrmse_sigma': optimal[1]}


def cmd_report(config, args, out):
    runs = args.runs or [config.output]
    cards, summary = [], {}
    for dirname in runs:
        label = os.path.basename(os.path.normpath(dirname))
        filename = os.path.join(dirname, 'model_card.json')
        if os.path.isfile(filename):
            cards.append(utils.read_json(filename))
        if os.path.isfile(os.path.join(dirname, 'predictions.csv')):
            summary[label] = evaluate_predictions(_read_predictions(dirname), out, prefix=os.path.join('report', label))['mean']
    if cards:
        evalreport.write_table(evalreport.metrics_table(cards), out('report', 'metrics_table.csv'))
    if not cards and not summary:
        raise UsageError('no model_card.json or predictions.csv in {}'.format(runs))
    out.write_json(os.path.join('report', 'summary.json'), summary)
    return {'n_cards': len(cards), 'runs': sorted(summary)}


def dispatch(argv=None):
    """
    Run command line ``argv`` (defaults to ``sys.argv[1:]``).

    Returns
    -------
    status : int
        0 on success, 1 on error, 2 on usage error; errors are printed to stderr as a JSON object.
    """
    parser = make_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        if args.command is None:
            raise UsageError('a command is required, one of {}'.format(list(COMMANDS)))
        logging.getLogger().setLevel(args.log_level.upper())
        config = make_config(args)
        out = RunDirectory(config.output)
        summary = globals()['cmd_{}'.format(args.command)](config, args, out)
        out.write_manifest(args.command, config)
        print(utils.dumps_json(summary))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({'error': exc.__class__.__name__, 'message': str(exc)}) + '\n')
        return 2
    except Exception as exc:
        logger.error('{}: {}'.format(exc.__class__.__name__, exc))
        sys.stderr.write(json.dumps({'error': exc.__class__.__name__, 'message': str(exc)}) + '\n')
        return 1
    return 0


def main():
    utils.setup_logging()
    sys.exit(dispatch())
