"""
Evaluation of wealth predictions: normalized errors, error by settlement and wealth quintile,
mean / standard deviation relationship, cross-country transfer, and report tables.
"""

import os
import logging
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd

from . import utils
from .gbrt import ColumnMismatchError


logger = logging.getLogger('Evaluation')


SETTLEMENT_ROWS = ('rural', 'urban')
N_QUINTILES = 5


class ConstantTruthError(ValueError):

    """Error raised when true values are constant, so that the normalized error is undefined."""


class TooFewError(ValueError):

    """Error raised when there are too few values."""


class ConstantInputError(ValueError):

    """Error raised when an input of a correlation is constant."""


def rmse(y_true, y_pred):
    """Root mean squared error."""
    y_true, y_pred = np.asarray(y_true, dtype='f8'), np.asarray(y_pred, dtype='f8')
    if y_true.shape != y_pred.shape:
        raise ValueError('y_true and y_pred must have same shape, found {} and {}'.format(y_true.shape, y_pred.shape))
    return float(np.sqrt(np.mean((y_pred - y_true)**2)))


def nrmse(y_true, y_pred, scale=None):
    """
    Root mean squared error normalized by the population standard deviation of ``y_true``.

    Parameters
    ----------
    y_true : array
        True values, at least 2.

    y_pred : array
        Predictions.

    scale : float, default=None
        Normalization to use instead of the standard deviation of ``y_true``.

    Returns
    -------
    nrmse : float
    """
    y_true = np.asarray(y_true, dtype='f8')
    if y_true.size < 2:
        raise TooFewError('at least 2 values are required, found {:d}'.format(y_true.size))
    if scale is None:
        scale = np.std(y_true)
        if scale == 0.:
            raise ConstantTruthError('true values are constant')
    return rmse(y_true, y_pred) / scale


@dataclass
class EvalMetrics:
    """Normalized and raw root mean squared errors of mean and standard deviation predictions."""

    eps_mu: float
    eps_sigma: float
    rmse_mu: float
    rmse_sigma: float
    n_test: int

    def to_dict(self):
        return asdict(self)


def evaluate(Y_true, Y_pred, scale=None):
    """
    Return :class:`EvalMetrics` of predictions ``Y_pred`` against ``Y_true``, both arrays of shape (n, 2) (mean, standard deviation).
    ``scale`` optionally provides the two normalizations.
    """
    Y_true, Y_pred = np.asarray(Y_true, dtype='f8'), np.asarray(Y_pred, dtype='f8')
    if scale is None: scale = (None, None)
    return EvalMetrics(eps_mu=nrmse(Y_true[:, 0], Y_pred[:, 0], scale=scale[0]), eps_sigma=nrmse(Y_true[:, 1], Y_pred[:, 1], scale=scale[1]),
                       rmse_mu=rmse(Y_true[:, 0], Y_pred[:, 0]), rmse_sigma=rmse(Y_true[:, 1], Y_pred[:, 1]), n_test=int(Y_true.shape[0]))


def pearson(x, y):
    """Pearson product-moment correlation of ``x`` and ``y``."""
    x, y = np.asarray(x, dtype='f8'), np.asarray(y, dtype='f8')
    if x.size != y.size:
        raise ValueError('x and y must have same size')
    if x.size < 2:
        raise TooFewError('at least 2 values are required, found {:d}'.format(x.size))
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.sum(dx**2), np.sum(dy**2)
    if sxx == 0. or syy == 0.:
        raise ConstantInputError('input is constant')
    return float(np.clip(np.sum(dx * dy) / np.sqrt(sxx * syy), -1., 1.))


def quintile_bins(values):
    """
    Return quintile index (0 to 4) of each of ``values``: 5 equally-populated bins of ranks,
    sizes differing by at most 1 (larger bins first), ties kept in input order.
    """
    values = np.asarray(values, dtype='f8')
    if values.size < N_QUINTILES:
        raise TooFewError('at least {:d} values are required, found {:d}'.format(N_QUINTILES, values.size))
    order = np.argsort(values, kind='stable')
    toret = np.empty(values.size, dtype='i8')
    for ibin, indices in enumerate(np.array_split(order, N_QUINTILES)):
        toret[indices] = ibin
    return toret


@dataclass
class IntersectionTable:
    """Root mean squared error of the mean per settlement (rows) and true-wealth quintile (columns); NaN where a cell is empty."""

    rmse: np.ndarray
    counts: np.ndarray
    settlements: tuple = SETTLEMENT_ROWS

    def overall_rmse(self):
        """Overall root mean squared error, recombined from cells."""
        mask = self.counts > 0
        return float(np.sqrt(np.sum(self.counts[mask] * self.rmse[mask]**2) / np.sum(self.counts[mask])))

    def to_frame(self, counts=False):
        """Return :class:`pandas.DataFrame` indexed by settlement, with columns Q1 to Q5."""
        columns = ['Q{:d}'.format(iq + 1) for iq in range(N_QUINTILES)]
        return pd.DataFrame(self.counts if counts else self.rmse, index=pd.Index(self.settlements, name='settlement'), columns=columns)

    def write_csv(self, filename):
        """Write RMSE and counts to CSV ``filename``, empty cells as '-'."""
        cells = [['-' if np.isnan(value) else '{:.6f}'.format(value) for value in row] for row in self.rmse]
        frame = pd.DataFrame(cells, index=self.to_frame().index, columns=self.to_frame().columns)
        counts = self.to_frame(counts=True).add_prefix('n_')
        utils.mkdir(os.path.dirname(filename) or '.')
        pd.concat([frame, counts], axis=1).to_csv(filename)


def intersection_table(y_true, y_pred=None, settlement=None):
    """
    Error of mean wealth predictions by settlement and quintile of true mean wealth, quintiles computed on this evaluation set.

    Parameters
    ----------
    y_true : array, pandas.DataFrame
        True mean wealth; or predictions table with columns mu, mu_pred, settlement.

    y_pred : array, default=None
        Predicted mean wealth.

    settlement : array, default=None
        'urban' or 'rural'.

    Returns
    -------
    table : IntersectionTable
    """
    if isinstance(y_true, pd.DataFrame):
        y_true, y_pred, settlement = y_true['mu'], y_true['mu_pred'], y_true['settlement']
    y_true, y_pred, settlement = np.asarray(y_true, dtype='f8'), np.asarray(y_pred, dtype='f8'), np.asarray(settlement)
    quintiles = quintile_bins(y_true)
    values = np.full((len(SETTLEMENT_ROWS), N_QUINTILES), np.nan)
    counts = np.zeros(values.shape, dtype='i8')
    for irow, name in enumerate(SETTLEMENT_ROWS):
        for iq in range(N_QUINTILES):
            mask = (settlement == name) & (quintiles == iq)
            counts[irow, iq] = mask.sum()
            if counts[irow, iq]: values[irow, iq] = rmse(y_true[mask], y_pred[mask])
    return IntersectionTable(values, counts)


def intersection_tables(predictions):
    """
    Intersection tables of each run of a predictions table (column run), plus their cell-wise mean (key 'mean');
    a mean cell is absent only if absent in every run.
    """
    tables = {int(run): intersection_table(group) for run, group in predictions.groupby('run', sort=True)}
    stacked = np.array([table.rmse for table in tables.values()])
    counts = np.array([table.counts for table in tables.values()])
    mean = np.full(stacked.shape[1:], np.nan)
    present = (counts > 0).any(axis=0)
    mean[present] = np.nanmean(stacked[:, present], axis=0)
    tables['mean'] = IntersectionTable(mean, np.rint(counts.mean(axis=0)).astype('i8'))
    return tables


@dataclass
class VariabilityReport:
    """Per settlement group: number of points, Pearson correlation of mean and standard deviation, degree-2 fit (c0, c1, c2) or None."""

    groups: dict

    def to_frame(self):
        rows = []
        for name, group in self.groups.items():
            coeffs = group['coefficients'] if group['coefficients'] is not None else [np.nan] * 3
            rows.append({'group': name, 'n': group['n'], 'pearson': group['pearson'], 'c0': coeffs[0], 'c1': coeffs[1], 'c2': coeffs[2]})
        return pd.DataFrame(rows)

    def to_dict(self):
        return {name: dict(group) for name, group in self.groups.items()}


def quadratic_fit(x, y):
    """Least-squares coefficients (c0, c1, c2) of y = c0 + c1 x + c2 x^2."""
    x, y = np.asarray(x, dtype='f8'), np.asarray(y, dtype='f8')
    if x.size < 3:
        raise TooFewError('at least 3 points are required for a quadratic fit, found {:d}'.format(x.size))
    return tuple(float(c) for c in np.polynomial.polynomial.polyfit(x, y, 2))


def variability(mu, sigma, settlement=None, groups=('all',) + SETTLEMENT_ROWS):
    """
    Relationship between mean and standard deviation of wealth, overall and per settlement.

    Parameters
    ----------
    mu : array
        Mean wealth (true or predicted).

    sigma : array
        Standard deviation of wealth.

    settlement : array, default=None
        'urban' or 'rural'; if ``None``, only group 'all' is reported.

    Returns
    -------
    report : VariabilityReport
    """
    mu, sigma = np.asarray(mu, dtype='f8'), np.asarray(sigma, dtype='f8')
    if settlement is None:
        settlement, groups = np.full(mu.size, 'all', dtype=object), ('all',)
    settlement = np.asarray(settlement)
    toret = {}
    for name in groups:
        mask = np.ones(mu.size, dtype='?') if name == 'all' else settlement == name
        n = int(mask.sum())
        group = {'n': n, 'pearson': np.nan, 'coefficients': None}
        try:
            group['pearson'] = pearson(mu[mask], sigma[mask])
        except (TooFewError, ConstantInputError) as exc:
            logger.warning('No correlation for group {}: {}'.format(name, exc))
        try:
            group['coefficients'] = quadratic_fit(mu[mask], sigma[mask])
        except TooFewError as exc:
            logger.warning('No quadratic fit for group {}: {}'.format(name, exc))
        toret[name] = group
    return VariabilityReport(toret)


@dataclass
class TransferMatrix:
    """Metrics of each training country's model (rows) on each evaluation country's test set (columns)."""

    countries: tuple
    entries: dict

    def __getitem__(self, key):
        return self.entries[tuple(key)]

    def to_frame(self):
        rows = []
        for (train, test), metrics in self.entries.items():
            rows.append({'train': train, 'test': test, **metrics.to_dict()})
        return pd.DataFrame(rows)


def transfer(model_A, model_B, test_A, test_B, countries=('A', 'B'), keep_sources=None):
    """
    Apply each country's model to both countries' test sets without retraining.

    Parameters
    ----------
    model_A, model_B : GBRTEnsemble
        Models trained in each country; they must share the same feature columns.

    test_A, test_B : tuple
        (FeatureMatrix, targets of shape (n, 2)) of each country's test set.

    countries : tuple, default=('A', 'B')
        Country names.

    keep_sources : list, default=None
        If not ``None``, features outside these sources are set missing on the evaluation country
        before applying the foreign model.

    Returns
    -------
    matrix : TransferMatrix
    """
    if list(model_A.names) != list(model_B.names):
        raise ColumnMismatchError('models do not share the same feature columns')
    models, tests = dict(zip(countries, [model_A, model_B])), dict(zip(countries, [test_A, test_B]))
    entries = {}
    for train in countries:
        for test in countries:
            X, Y = tests[test]
            if train != test and keep_sources is not None:
                X = X.mask_sources(keep_sources)
            entries[train, test] = evaluate(Y, models[train].predict(X))
            logger.info('Transfer {} -> {}: NRMSE mu = {:.3f}.'.format(train, test, entries[train, test].eps_mu))
    return TransferMatrix(tuple(countries), entries)


def metrics_table(cards):
    """
    Table of test metrics of model cards, one row per card: configuration (country, recency, relocation, weights, sources)
    and mean metrics over runs.
    """
    rows = []
    for card in cards:
        if not isinstance(card, dict): card = card.to_dict()
        fingerprint = card['fingerprint']
        row = {'country': fingerprint['country'], 'recency': fingerprint['recency'], 'relocation': fingerprint['relocation'],
               'weights': fingerprint['weights']['scheme'], 'sources': '+'.join(fingerprint['sources']), 'n_runs': len(card['runs'])}
        row.update(card['mean_metrics'])
        rows.append(row)
    return pd.DataFrame(rows)


def population_report(poverty_map):
    """
    Population / wealth relationship of populated places, per settlement: number of places, mean population within 1.6 km,
    mean predicted mean and standard deviation, Pearson correlation of population and mean, and of mean and standard deviation.
    """
    frame = poverty_map.to_frame() if hasattr(poverty_map, 'to_frame') else poverty_map
    rows = []
    for name in ('all',) + SETTLEMENT_ROWS:
        group = frame if name == 'all' else frame[frame['settlement'] == name]
        row = {'settlement': name, 'n': len(group), 'population': group['population'].mean(), 'mu': group['mu'].mean(),
               'sigma': group['sigma'].mean(), 'pearson_population_mu': np.nan, 'pearson_mu_sigma': np.nan}
        population = group['population'].to_numpy(dtype='f8')
        valid = ~np.isnan(population)
        for key, x, y in [('pearson_population_mu', population[valid], group['mu'].to_numpy()[valid]),
                          ('pearson_mu_sigma', group['mu'].to_numpy(), group['sigma'].to_numpy())]:
            try:
                row[key] = pearson(x, y)
            except (TooFewError, ConstantInputError) as exc:
                logger.warning('No correlation {} for settlement {}: {}'.format(key, name, exc))
        rows.append(row)
    return pd.DataFrame(rows)


def write_table(frame, filename, index=False):
    """Write ``frame`` to CSV ``filename``, creating the directory if needed."""
    utils.mkdir(os.path.dirname(filename) or '.')
    frame.to_csv(filename, index=index, float_format='%.6f')
