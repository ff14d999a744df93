"""
Training protocol: recency configurations, stratified train / test split, class-balancing sample weights,
cross-validated random hyperparameter search, refit and evaluation repeated over runs.
"""

import logging
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd
from scipy import stats as scipy_stats
from sklearn.model_selection import StratifiedKFold, KFold, ParameterSampler

from mpytools import CurrentMPIComm

from . import utils, gbrt, evalreport
from .features import FeatureConfig, LocationSet, assemble, standardize_per_year, METADATA_SOURCES
from .groundtruth import compute_ground_truth, relocate, discretize_equal_width, RELOCATION_MODES
from .utils import BaseClass


logger = logging.getLogger('Pipeline')


RECENCY_MODES = ('OO', 'NN', 'O-N', 'ON')
RECENCY_ALIASES = {'ON_train_old_test_new': 'O-N', 'ON_combined': 'ON', 'O-O': 'OO', 'N-N': 'NN'}
WEIGHT_SCHEMES = ('none', 'ens', 'ins', 'heuristic', 'sklearn')
# keys of derived seeds
SPLIT_KEY, FOLD_KEY, SAMPLER_KEY, CANDIDATE_KEY, REFIT_KEY = range(5)


class TooFewSamplesError(ValueError):

    """Error raised when there are too few clusters to split or cross-validate."""


@dataclass(frozen=True)
class RecencyConfig:
    """
    Which survey years feed the train and test sides:
    'OO' (oldest year, stratified split), 'NN' (newest year, stratified split),
    'O-N' (train on all oldest, test on all newest), 'ON' (both years, stratified split).
    """

    mode: str = 'ON'
    oldest_year: int = None
    newest_year: int = None

    def __post_init__(self):
        mode = RECENCY_ALIASES.get(self.mode, self.mode)
        if mode not in RECENCY_MODES:
            raise ValueError('recency mode must be one of {} (or aliases {}), found {}'.format(RECENCY_MODES, list(RECENCY_ALIASES), self.mode))
        object.__setattr__(self, 'mode', mode)

    def resolve(self, years):
        """Return config with missing years set to the oldest / newest of ``years``; years must be present."""
        years = sorted(set(int(year) for year in years))
        oldest = years[0] if self.oldest_year is None else int(self.oldest_year)
        newest = years[-1] if self.newest_year is None else int(self.newest_year)
        for year in [oldest, newest]:
            if year not in years:
                raise ValueError('year {:d} not in survey years {}'.format(year, years))
        if self.mode == 'O-N' and oldest == newest:
            raise ValueError('recency O-N requires two distinct years')
        return RecencyConfig(self.mode, oldest, newest)


@dataclass(frozen=True)
class WeightConfig:
    """Sample weighting: 'none' or 'ens' (effective number of samples over equal-width wealth bins)."""

    scheme: str = 'none'
    beta: float = 0.9
    n_bins: int = 10

    def __post_init__(self):
        scheme = str(self.scheme).lower()
        if scheme not in WEIGHT_SCHEMES:
            raise ValueError('weight scheme must be one of {}, found {}'.format(WEIGHT_SCHEMES, self.scheme))
        object.__setattr__(self, 'scheme', scheme)
        if not 0. <= self.beta < 1.:
            raise ValueError('beta must be in [0, 1), found {}'.format(self.beta))
        if self.n_bins < 2:
            raise ValueError('n_bins must be >= 2, found {}'.format(self.n_bins))


def default_distributions():
    """Hyperparameter distributions of the random search."""
    return {'n_trees': scipy_stats.loguniform(50, 501),
            'max_depth': scipy_stats.randint(3, 11),
            'learning_rate': scipy_stats.loguniform(0.01, 0.3),
            'min_samples_leaf': scipy_stats.randint(1, 21),
            'l2_leaf_reg': scipy_stats.uniform(0., 10.),
            'subsample_rows': scipy_stats.uniform(0.6, 0.4),
            'subsample_cols': scipy_stats.uniform(0.6, 0.4)}


SEARCH_PROFILES = {'ci': dict(n_candidates=20, n_folds=2, n_runs=1), 'full': dict(n_candidates=200, n_folds=4, n_runs=3)}


@dataclass
class SearchSpec:
    """Random search settings; ``distributions`` maps :class:`gbrt.Hyperparams` fields to scipy distributions or lists."""

    n_candidates: int = 200
    n_folds: int = 4
    n_runs: int = 3
    distributions: dict = field(default_factory=default_distributions)
    seed: int = 0

    @classmethod
    def profile(cls, name, seed=0, **kwargs):
        """Return :class:`SearchSpec` of profile ``name``, 'ci' (20 candidates, 2 folds, 1 run) or 'full' (200, 4, 3)."""
        if name not in SEARCH_PROFILES:
            raise ValueError('search profile must be one of {}, found {}'.format(list(SEARCH_PROFILES), name))
        return cls(**{**SEARCH_PROFILES[name], 'seed': seed, **kwargs})

    def sample(self, run=0):
        """Return list of candidate :class:`gbrt.Hyperparams` for run ``run``; candidate seeds are derived from (seed, run, candidate)."""
        sampler = ParameterSampler(self.distributions, n_iter=self.n_candidates, random_state=utils.derive_seed(self.seed, run, SAMPLER_KEY))
        toret = []
        for icandidate, params in enumerate(sampler):
            params = {name: (value.item() if isinstance(value, np.generic) else value) for name, value in params.items()}
            params['random_seed'] = utils.derive_seed(self.seed, run, CANDIDATE_KEY, icandidate)
            toret.append(gbrt.Hyperparams(**params))
        return toret

    def to_dict(self):
        return {'n_candidates': self.n_candidates, 'n_folds': self.n_folds, 'n_runs': self.n_runs, 'seed': self.seed,
                'distributions': sorted(self.distributions)}


def _wealth_bins(mu, n_bins=10):
    return discretize_equal_width(np.asarray(mu, dtype='f8'), k=n_bins)


def stratified_split(stats, test_frac=0.2, seed=0, n_bins=10):
    """
    Split clusters into train and test sets, stratified on equal-width bins of mean wealth:
    in each bin of n members, floor(n * test_frac) random members go to test.

    Parameters
    ----------
    stats : pandas.DataFrame
        Cluster statistics (columns cluster_id, mu).

    test_frac : float, default=0.2
        Test fraction.

    seed : int, default=0
        Random seed.

    Returns
    -------
    train_ids, test_ids : array
        Cluster identifiers, in ``stats`` order.
    """
    ids, mu = stats['cluster_id'].to_numpy(), stats['mu'].to_numpy()
    if ids.size < 10:
        raise TooFewSamplesError('at least 10 clusters are required to split, found {:d}'.format(ids.size))
    bins = _wealth_bins(mu, n_bins=n_bins)
    rng = np.random.RandomState(seed=seed)
    is_test = np.zeros(ids.size, dtype='?')
    small = []
    for ibin in range(n_bins):
        members = np.flatnonzero(bins == ibin)
        if not members.size: continue
        ntest = int(np.floor(members.size * test_frac + 1e-9))
        if ntest == 0: small.append(ibin)
        is_test[rng.permutation(members)[:ntest]] = True
    if small:
        logger.warning('Wealth bin(s) {} too small to contribute test clusters, kept in train.'.format(small))
    return ids[~is_test], ids[is_test]


def ens_weights(mu, cfg=None):
    """
    Class-balancing sample weights from the effective number of samples:
    each member of wealth bin c (of n_c training members) receives (1 - beta) / (1 - beta^n_c), then weights are normalized to mean 1.

    Parameters
    ----------
    mu : array, pandas.DataFrame
        Training mean wealth, or training cluster statistics.

    cfg : WeightConfig, default=None
        Weight settings; scheme 'none' returns uniform weights.

    Returns
    -------
    weights : array
    """
    cfg = cfg or WeightConfig('ens')
    if isinstance(mu, pd.DataFrame): mu = mu['mu']
    mu = np.asarray(mu, dtype='f8')
    if not mu.size:
        raise ValueError('training set is empty')
    if cfg.scheme == 'none':
        return np.ones_like(mu)
    if cfg.scheme != 'ens':
        raise NotImplementedError('weight scheme {} is not implemented'.format(cfg.scheme))
    bins = _wealth_bins(mu, n_bins=cfg.n_bins)
    counts = np.bincount(bins, minlength=cfg.n_bins)[bins]
    raw = ens_bin_weight(counts, cfg.beta)
    return raw / raw.mean()


def ens_bin_weight(n, beta):
    """Raw weight (1 - beta) / (1 - beta^n) of a bin of ``n`` members; 1 for beta = 0."""
    n = np.asarray(n, dtype='f8')
    if beta == 0.:
        return np.ones_like(n)
    return (1. - beta) / (1. - beta**n)


def stratified_folds(bins, n_folds=4, seed=0):
    """
    Return list of (train indices, validation indices) of ``n_folds`` folds stratified on ``bins``;
    plain shuffled folds if every bin is smaller than ``n_folds``.
    """
    bins = np.asarray(bins)
    counts = np.bincount(bins)
    counts = counts[counts > 0]
    if np.all(counts < n_folds):
        logger.warning('All wealth bins have fewer than {:d} members, folds are not stratified.'.format(n_folds))
        splitter = KFold(n_splits=n_folds, shuffle=True, random_state=seed)
    else:
        if np.any(counts < n_folds):
            logger.warning('Wealth bin(s) with fewer than {:d} members, stratification is approximate.'.format(n_folds))
        splitter = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', UserWarning)
        return [(train, test) for train, test in splitter.split(np.zeros((bins.size, 1)), bins)]


def weighted_variance(Y, w):
    """Weighted population variance of each column of ``Y``."""
    Y, w = np.asarray(Y, dtype='f8'), np.asarray(w, dtype='f8')
    mean = np.sum(w[:, None] * Y, axis=0) / w.sum()
    return np.sum(w[:, None] * (Y - mean)**2, axis=0) / w.sum()


def selection_loss(Y, P, w, scale):
    """Mean over targets of the weighted mean squared error divided by ``scale`` (training target variance)."""
    Y, P, w = np.asarray(Y, dtype='f8'), np.asarray(P, dtype='f8'), np.asarray(w, dtype='f8')
    mse = np.sum(w[:, None] * (Y - P)**2, axis=0) / w.sum()
    scale = np.where(np.asarray(scale) > 0., scale, 1.)
    return float(np.mean(mse / scale))


@CurrentMPIComm.enable
def random_search_cv(X, Y, w, spec, bins=None, run=0, names=None, joint=True, mpicomm=None):
    """
    Cross-validated random hyperparameter search.

    Parameters
    ----------
    X : FeatureMatrix, array
        Training features.

    Y : array of shape (n, 2)
        Training targets.

    w : array
        Training sample weights.

    spec : SearchSpec
        Search settings.

    bins : array, default=None
        Stratification bins of the folds, defaults to 10 equal-width bins of the first target.

    run : int, default=0
        Run index, entering seed derivation.

    joint : bool, default=True
        Joint (mean, standard deviation) trees, see :func:`gbrt.fit`.

    mpicomm : MPI communicator, default=None
        Candidates are split across ranks.

    Returns
    -------
    best : gbrt.Hyperparams
        Candidate with lowest mean validation loss (earlier candidate on ties).

    table : pandas.DataFrame
        One row per candidate: hyperparameters, validation loss per fold, mean loss, error (empty if none).
    """
    if hasattr(X, 'names') and hasattr(X, 'values'):
        names = list(X.names) if names is None else names
        X = X.values
    X, Y, w = np.asarray(X, dtype='f8'), np.asarray(Y, dtype='f8'), np.asarray(w, dtype='f8')
    if X.shape[0] < 2 * spec.n_folds:
        raise TooFewSamplesError('at least {:d} training rows are required for {:d} folds, found {:d}'.format(2 * spec.n_folds, spec.n_folds, X.shape[0]))
    if bins is None: bins = _wealth_bins(Y[:, 0])
    folds = stratified_folds(bins, n_folds=spec.n_folds, seed=utils.derive_seed(spec.seed, run, FOLD_KEY))
    scale = weighted_variance(Y, w)
    candidates = spec.sample(run=run)
    results = {}
    for icandidate in range(mpicomm.rank, len(candidates), mpicomm.size):
        hp = candidates[icandidate]
        losses, error = [], ''
        try:
            for ifold, (train, valid) in enumerate(folds):
                model = gbrt.fit(X[train], Y[train], w=w[train], hp=hp, names=names, joint=joint)
                losses.append(selection_loss(Y[valid], model.predict(X[valid]), w[valid], scale))
        except Exception as exc:
            error = '{}: {}'.format(exc.__class__.__name__, exc)
            losses = [np.inf] * len(folds)
            logger.warning('Candidate {:d} failed with {}'.format(icandidate, error))
        results[icandidate] = (losses, error)
    for rank_results in mpicomm.allgather(results):
        results.update(rank_results)
    rows = []
    for icandidate, hp in enumerate(candidates):
        losses, error = results[icandidate]
        row = {'candidate': icandidate, **hp.to_dict()}
        row.update({'fold_{:d}'.format(ifold): loss for ifold, loss in enumerate(losses)})
        row['mean_loss'] = float(np.mean(losses))
        row['error'] = error
        rows.append(row)
    table = pd.DataFrame(rows)
    if not np.isfinite(table['mean_loss']).any():
        raise RuntimeError('all {:d} candidates failed, first error: {}'.format(len(candidates), table['error'].iloc[0]))
    best = int(np.argmin(table['mean_loss'].to_numpy()))
    if mpicomm.rank == 0:
        logger.info('Run {:d}: best candidate {:d} out of {:d}, mean validation loss {:.4f}.'.format(run, best, len(candidates), table['mean_loss'].iloc[best]))
    return candidates[best], table


class Dataset(BaseClass):
    """
    Cluster statistics (after relocation) and their standardized feature matrix, rows in the same order.
    """

    def __init__(self, stats, features, plan=None, country_code='', bundle_fingerprint=''):
        self.stats = stats.reset_index(drop=True)
        self.features = features
        self.plan = plan
        self.country_code = country_code
        self.bundle_fingerprint = bundle_fingerprint
        if list(self.stats['cluster_id']) != list(self.features.location_ids):
            raise ValueError('stats and features must have the same rows')

    @property
    def years(self):
        return sorted(set(self.stats['year'].tolist()))

    def indices(self, ids):
        """Row indices of cluster ``ids``."""
        lookup = {cluster_id: index for index, cluster_id in enumerate(self.stats['cluster_id'].tolist())}
        return np.array([lookup[cluster_id] for cluster_id in ids], dtype='i8')

    def targets(self, indices=None):
        """Return (mu, sigma) array."""
        Y = self.stats[['mu', 'sigma']].to_numpy(dtype='f8')
        return Y if indices is None else Y[indices]

    def select_sources(self, sources):
        """Return dataset with features restricted to ``sources``."""
        return self.__class__(self.stats, self.features.select_sources(sources), plan=self.plan,
                              country_code=self.country_code, bundle_fingerprint=self.bundle_fingerprint)

    def digest(self):
        """Digest of features and targets."""
        return utils.digest(self.features.values, self.targets(), '|'.join(self.features.names), '|'.join(map(str, self.stats['cluster_id'])))


def prepare_dataset(bundle, relocation_mode='none', sources=None, cfg=None, weights=None, rescale='bundle'):
    """
    Ground truth, relocation and standardized features of all clusters of ``bundle``.

    Parameters
    ----------
    bundle : DatasetBundle
        Validated bundle.

    relocation_mode : str, default='none'
        'none', 'rc' or 'ruc', see :func:`groundtruth.relocate`.

    sources : list, default=None
        Feature sources to keep, defaults to all metadata sources plus embeddings when the bundle has embeddings.

    cfg : FeatureConfig, default=None
        Feature settings.

    weights : AssetWeights, dict, default=None
        Fixed asset weights, see :func:`groundtruth.compute_ground_truth`.

    rescale : str, default='bundle'
        IWI rescaling, see :func:`groundtruth.compute_asset_weights`.

    Returns
    -------
    dataset : Dataset
    """
    if relocation_mode not in RELOCATION_MODES:
        raise ValueError('relocation mode must be one of {}, found {}'.format(RELOCATION_MODES, relocation_mode))
    stats = compute_ground_truth(bundle, weights=weights, rescale=rescale)[0]
    plan = relocate(stats, bundle.places, mode=relocation_mode)
    located = plan.apply(stats, bundle.places)
    embeddings = bundle.has('embeddings') and (sources is None or 'embedding' in sources)
    features = standardize_per_year(assemble(LocationSet.from_clusters(located), bundle, cfg=cfg or FeatureConfig(), embeddings=embeddings))
    if sources is None:
        sources = list(METADATA_SOURCES) + (['embedding'] if embeddings else [])
    features = features.select_sources(sources)
    return Dataset(located, features, plan=plan, country_code=bundle.country_code, bundle_fingerprint=bundle.fingerprint())


def recency_split(stats, recency, seed=0, test_frac=0.2):
    """
    Train and test cluster ids of ``stats`` under :class:`RecencyConfig` ``recency`` (resolved on ``stats`` years).
    The split only depends on cluster ids, mean wealth, years and ``seed``.
    """
    recency = recency.resolve(stats['year'])
    year = stats['year'].to_numpy()
    if recency.mode == 'O-N':
        return stats['cluster_id'].to_numpy()[year == recency.oldest_year], stats['cluster_id'].to_numpy()[year == recency.newest_year]
    if recency.mode == 'OO': mask = year == recency.oldest_year
    elif recency.mode == 'NN': mask = year == recency.newest_year
    else: mask = np.isin(year, [recency.oldest_year, recency.newest_year])
    return stratified_split(stats[mask], test_frac=test_frac, seed=seed)


@dataclass
class ModelCard:
    """Record of a training protocol: chosen hyperparameters, per-run details and metrics, mean metrics, data fingerprint, seed."""

    hyperparams: dict
    runs: list
    mean_metrics: dict
    fingerprint: dict
    seed: int
    search: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        """Deterministic JSON string."""
        return utils.dumps_json(self.to_dict())

    def save(self, filename):
        utils.write_json(filename, self.to_dict())

    @classmethod
    def load(cls, filename):
        return cls(**utils.read_json(filename))


def mean_metrics(metrics):
    """Average each entry of a list of metric dictionaries."""
    keys = metrics[0].keys()
    return {key: float(np.mean([m[key] for m in metrics])) for key in keys}


@CurrentMPIComm.enable
def train_final(bundle, recency=None, relocation_mode='none', weights=None, spec=None, sources=None, joint=True,
                dataset=None, cfg=None, mpicomm=None):
    """
    Run the full training protocol ``spec.n_runs`` times: split per recency, sample weights, random search,
    refit on the whole train set with the best hyperparameters, evaluation on the test set.

    Parameters
    ----------
    bundle : DatasetBundle
        Validated bundle (may be ``None`` if ``dataset`` is provided).

    recency : RecencyConfig, str, default=None
        Recency configuration, defaults to 'ON'.

    relocation_mode : str, default='none'
        Relocation mode.

    weights : WeightConfig, str, default=None
        Weight configuration, defaults to 'none'.

    spec : SearchSpec, str, default=None
        Search settings or profile name, defaults to profile 'ci'.

    sources : list, default=None
        Feature sources to train on.

    joint : bool, default=True
        Joint (mean, standard deviation) trees.

    dataset : Dataset, default=None
        Precomputed dataset, e.g. to share features across configurations.

    cfg : FeatureConfig, default=None
        Feature settings.

    Returns
    -------
    card : ModelCard
        Per-run and mean test metrics.

    model : gbrt.GBRTEnsemble
        Final run's refit model.

    predictions : pandas.DataFrame
        Test predictions of every run: run, cluster_id, year, settlement, mu, sigma, mu_pred, sigma_pred.
    """
    if recency is None or isinstance(recency, str): recency = RecencyConfig(recency or 'ON')
    if weights is None or isinstance(weights, str): weights = WeightConfig(weights or 'none')
    if spec is None or isinstance(spec, str): spec = SearchSpec.profile(spec or 'ci')
    if dataset is None:
        dataset = prepare_dataset(bundle, relocation_mode=relocation_mode, sources=sources, cfg=cfg)
    elif sources is not None:
        dataset = dataset.select_sources(sources)
    recency = recency.resolve(dataset.stats['year'])
    runs, predictions, model = [], [], None
    for run in range(spec.n_runs):
        train_ids, test_ids = recency_split(dataset.stats, recency, seed=utils.derive_seed(spec.seed, run, SPLIT_KEY))
        train, test = dataset.indices(train_ids), dataset.indices(test_ids)
        Y = dataset.targets()
        w = ens_weights(Y[train, 0], weights)
        X_train = dataset.features.take(train)
        best, table = random_search_cv(X_train, Y[train], w, spec, run=run, joint=joint, mpicomm=mpicomm)
        hp = gbrt.Hyperparams(**{**best.to_dict(), 'random_seed': utils.derive_seed(spec.seed, run, REFIT_KEY)})
        model = gbrt.fit(X_train, Y[train], w=w, hp=hp, joint=joint)
        pred = model.predict(dataset.features.take(test))
        metrics = evalreport.evaluate(Y[test], pred).to_dict()
        chosen = table.iloc[table['mean_loss'].to_numpy().argmin()]
        runs.append({'run': run, 'hyperparams': hp.to_dict(), 'cv_losses': [float(chosen['fold_{:d}'.format(ifold)]) for ifold in range(spec.n_folds)],
                     'metrics': metrics, 'n_train': int(train.size), 'n_test': int(test.size)})
        frame = dataset.stats.iloc[test][['cluster_id', 'year', 'settlement', 'mu', 'sigma']].reset_index(drop=True)
        frame.insert(0, 'run', run)
        frame['mu_pred'], frame['sigma_pred'] = pred[:, 0], pred[:, 1]
        predictions.append(frame)
        if mpicomm.rank == 0:
            logger.info('Run {:d}: NRMSE mu = {:.3f}, sigma = {:.3f} on {:d} test clusters.'.format(run, metrics['eps_mu'], metrics['eps_sigma'], test.size))
    fingerprint = {'country': dataset.country_code, 'years': [recency.oldest_year, recency.newest_year], 'recency': recency.mode,
                   'relocation': dataset.plan.mode if dataset.plan is not None else relocation_mode,
                   'weights': {'scheme': weights.scheme, 'beta': weights.beta, 'n_bins': weights.n_bins},
                   'sources': sorted(set(dataset.features.sources), key=lambda source: list(METADATA_SOURCES + ('embedding',)).index(source)),
                   'joint': bool(joint), 'data_digest': dataset.digest(), 'bundle_digest': dataset.bundle_fingerprint}
    card = ModelCard(hyperparams=runs[-1]['hyperparams'], runs=runs, mean_metrics=mean_metrics([run['metrics'] for run in runs]),
                     fingerprint=fingerprint, seed=spec.seed, search=spec.to_dict())
    return card, model, pd.concat(predictions, ignore_index=True)
