"""
Ground truth: household wealth index (IWI) from asset answers, cluster aggregation into (mean, standard deviation)
targets, and relocation of noisy cluster coordinates onto populated places.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .geo import SpatialIndex
from .ingest import SETTLEMENTS, settlement_of_kind
from .utils import BaseClass


logger = logging.getLogger('GroundTruth')


KEEP_NOISY = 'keep_noisy'
RELOCATION_MODES = ('none', 'rc', 'ruc')
# search radius around the noisy location, per settlement
RELOCATION_RADII_KM = {'urban': 2., 'rural': 10.}


class DegenerateMatrixError(ValueError):

    """Error raised when the asset matrix has no variance to extract a principal component from."""


class WeightDimensionMismatchError(ValueError):

    """Error raised when asset weights do not match the number of asset columns."""


class EmptyClusterError(ValueError):

    """Error raised when a cluster has no household."""


class AllZeroError(ValueError):

    """Error raised when computing the Gini coefficient of all-zero values."""


@dataclass
class AssetMatrix:
    """
    Encoded household asset answers.

    Attributes
    ----------
    values : array of shape (n_households, n_columns)
        Encoded answers, no missing entries.

    columns : list
        Asset column names.

    household_ids, cluster_ids : array
        Household and cluster identifiers, one per row.

    bounds : array of shape (n_columns, 2)
        Lowest and highest admissible encoded values of each column.
    """
    values: np.ndarray
    columns: list
    household_ids: np.ndarray = None
    cluster_ids: np.ndarray = None
    bounds: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype='f8')
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise WeightDimensionMismatchError('asset matrix of shape {} does not match {:d} columns'.format(self.values.shape, len(self.columns)))
        if not np.all(np.isfinite(self.values)):
            raise ValueError('asset matrix must not have missing entries')
        if self.bounds is None:
            self.bounds = np.column_stack([self.values.min(axis=0, initial=np.inf), self.values.max(axis=0, initial=-np.inf)])
        self.bounds = np.asarray(self.bounds, dtype='f8')

    @classmethod
    def from_bundle(cls, bundle):
        """Encode households of :class:`ingest.DatasetBundle` ``bundle``."""
        values = bundle.encode_assets()
        bounds = []
        for icol, column in enumerate(bundle.asset_columns):
            domain = bundle.asset_domains.get(column, None)
            if domain is not None: bounds.append((0., len(domain) - 1.))
            else: bounds.append((values[:, icol].min(initial=np.inf), values[:, icol].max(initial=-np.inf)))
        households = bundle.households
        return cls(values, list(bundle.asset_columns), household_ids=households['household_id'].to_numpy(),
                   cluster_ids=households['cluster_id'].to_numpy(), bounds=np.array(bounds))

    def __len__(self):
        return self.values.shape[0]


@dataclass
class AssetWeights:
    """
    Asset weights: loadings applied to column-standardized answers,
    and the score range mapped onto [0, 100].
    """
    loadings: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    score_min: float
    score_max: float
    explained_variance: float = field(default=np.nan)

    def __post_init__(self):
        for name in ['loadings', 'means', 'stds']:
            setattr(self, name, np.asarray(getattr(self, name), dtype='f8'))
        self.score_min, self.score_max = float(self.score_min), float(self.score_max)
        if not (self.loadings.shape == self.means.shape == self.stds.shape):
            raise WeightDimensionMismatchError('loadings, means, stds must have same shape')
        if not self.score_max > self.score_min:
            raise DegenerateMatrixError('score_max must be > score_min')

    def to_state(self):
        """Return dictionary, as accepted by :meth:`from_state`."""
        return {'loadings': self.loadings.tolist(), 'means': self.means.tolist(), 'stds': self.stds.tolist(),
                'score_min': self.score_min, 'score_max': self.score_max, 'explained_variance': float(self.explained_variance)}

    @classmethod
    def from_state(cls, state):
        """Build from dictionary, e.g. the ``iwi_weights`` entry of a bundle manifest."""
        state = dict(state)
        return cls(state['loadings'], state['means'], state['stds'], state['score_min'], state['score_max'],
                   explained_variance=np.nan if state.get('explained_variance', None) is None else state['explained_variance'])

    def scores(self, values):
        """Return raw (not rescaled) scores of encoded answers ``values``."""
        values = np.asarray(values, dtype='f8')
        if values.ndim != 2 or values.shape[1] != self.loadings.size:
            raise WeightDimensionMismatchError('expected {:d} asset columns, found array of shape {}'.format(self.loadings.size, values.shape))
        active = self.stds > 0.
        standardized = np.zeros_like(values)
        standardized[:, active] = (values[:, active] - self.means[active]) / self.stds[active]
        return standardized.dot(self.loadings)


def compute_asset_weights(m, rescale='bundle'):
    """
    Principal component analysis of the column-standardized asset matrix.

    Parameters
    ----------
    m : AssetMatrix
        Encoded answers, at least 2 households.

    rescale : str, default='bundle'
        If 'bundle', the lowest and highest scores over the households of ``m`` map onto 0 and 100.
        If 'domain', the lowest and highest scores reachable within the admissible answer bounds map onto 0 and 100,
        making scores comparable across bundles sharing the same answer domains.

    Returns
    -------
    weights : AssetWeights
        First principal component loadings (unit norm, zero for constant columns, positive sum).
    """
    values = m.values
    if values.shape[0] < 2:
        raise DegenerateMatrixError('at least 2 households are required, found {:d}'.format(values.shape[0]))
    means, stds = values.mean(axis=0), values.std(axis=0)
    active = stds > 1e-12 * np.maximum(np.abs(means), 1.)
    if not active.any():
        raise DegenerateMatrixError('all asset columns are constant')
    if not active.all():
        logger.warning('Asset column(s) {} are constant, zero-weighted.'.format([m.columns[i] for i in np.flatnonzero(~active)]))
    stds = np.where(active, stds, 0.)
    standardized = (values[:, active] - means[active]) / stds[active]
    correlation = standardized.T.dot(standardized) / values.shape[0]
    eigenvalues, eigenvectors = np.linalg.eigh(correlation)
    vector = eigenvectors[:, -1]
    total = vector.sum()
    if total < 0. or (total == 0. and vector[np.flatnonzero(vector)[0]] < 0.):
        vector = -vector
    loadings = np.zeros(values.shape[1], dtype='f8')
    loadings[active] = vector
    explained_variance = eigenvalues[-1] / eigenvalues.sum()
    if rescale == 'bundle':
        scores = standardized.dot(vector)
        score_min, score_max = scores.min(), scores.max()
    elif rescale == 'domain':
        low, high = (m.bounds[:, 0] - means) / np.where(active, stds, 1.), (m.bounds[:, 1] - means) / np.where(active, stds, 1.)
        score_min = np.sum(np.minimum(low * loadings, high * loadings))
        score_max = np.sum(np.maximum(low * loadings, high * loadings))
    else:
        raise ValueError('rescale must be one of ["bundle", "domain"], found {}'.format(rescale))
    if not score_max > score_min:
        raise DegenerateMatrixError('scores span an empty range')
    logger.info('First principal component explains {:.1%} of asset variance.'.format(explained_variance))
    return AssetWeights(loadings, means, stds, score_min, score_max, explained_variance=explained_variance)


def compute_iwi(m, w):
    """
    Return per-household IWI in [0, 100].

    Parameters
    ----------
    m : AssetMatrix, array
        Encoded answers.

    w : AssetWeights, dict
        Weights, e.g. from :func:`compute_asset_weights`, or a fixed weight table.

    Returns
    -------
    iwi : array
    """
    if isinstance(w, dict):
        w = AssetWeights.from_state(w)
    values = m.values if isinstance(m, AssetMatrix) else m
    scores = w.scores(values)
    return np.clip(100. * (scores - w.score_min) / (w.score_max - w.score_min), 0., 100.)


def aggregate_clusters(scores, household_cluster_ids, clusters):
    """
    Aggregate household IWI per cluster.

    Parameters
    ----------
    scores : array
        Household IWI.

    household_cluster_ids : array
        Cluster of each household.

    clusters : pandas.DataFrame
        Clusters layer, with columns cluster_id, lat, lon, year, settlement.

    Returns
    -------
    stats : pandas.DataFrame
        One row per cluster (in ``clusters`` order): cluster_id, lat, lon, year, settlement,
        mu (mean), sigma (population standard deviation), n_households.
    """
    households = pd.DataFrame({'cluster_id': np.asarray(household_cluster_ids), 'iwi': np.asarray(scores, dtype='f8')})
    grouped = households.groupby('cluster_id', sort=False)['iwi']
    aggregated = pd.DataFrame({'mu': grouped.mean(), 'sigma': grouped.std(ddof=0), 'n_households': grouped.size()})
    stats = clusters[['cluster_id', 'lat', 'lon', 'year', 'settlement']].reset_index(drop=True)
    stats = stats.join(aggregated, on='cluster_id')
    empty = stats['n_households'].isna().to_numpy()
    if empty.any():
        raise EmptyClusterError('cluster(s) {} have no household'.format(stats['cluster_id'][empty].tolist()[:10]))
    stats['n_households'] = stats['n_households'].astype('i8')
    stats['mu'] = stats['mu'].clip(0., 100.)
    singletons = stats['n_households'].to_numpy() == 1
    stats.loc[singletons, 'sigma'] = 0.
    if singletons.any():
        logger.warning('{:d} single-household cluster(s), sigma set to 0: {}'.format(singletons.sum(), stats['cluster_id'][singletons].tolist()[:10]))
    return stats


def compute_ground_truth(bundle, weights=None, rescale='bundle'):
    """
    Household IWI and cluster statistics of :class:`ingest.DatasetBundle` ``bundle``.

    Parameters
    ----------
    weights : AssetWeights, dict, default=None
        Fixed weight table. Defaults to ``bundle.iwi_weights``, else PCA of the bundle households.

    rescale : str, default='bundle'
        See :func:`compute_asset_weights`.

    Returns
    -------
    stats : pandas.DataFrame
        See :func:`aggregate_clusters`.

    weights : AssetWeights
        Weights used.

    iwi : array
        Household IWI.
    """
    matrix = AssetMatrix.from_bundle(bundle)
    if weights is None:
        weights = bundle.iwi_weights
    if weights is None:
        weights = compute_asset_weights(matrix, rescale=rescale)
    elif isinstance(weights, dict):
        weights = AssetWeights.from_state(weights)
    iwi = compute_iwi(matrix, weights)
    stats = aggregate_clusters(iwi, matrix.cluster_ids, bundle.clusters)
    return stats, weights, iwi


class RelocationPlan(BaseClass):
    """
    Assignment of clusters to populated places; clusters not relocated are marked :data:`KEEP_NOISY`.
    """

    def __init__(self, cluster_ids, place_ids, distances, mode='none'):
        self.cluster_ids = np.asarray(cluster_ids, dtype=object)
        self.place_ids = np.asarray(place_ids, dtype=object)
        self.distances = np.asarray(distances, dtype='f8')
        if mode not in RELOCATION_MODES:
            raise ValueError('mode must be one of {}, found {}'.format(RELOCATION_MODES, mode))
        self.mode = mode

    @property
    def relocated(self):
        """Boolean mask of relocated clusters."""
        return self.place_ids != KEEP_NOISY

    @property
    def assignments(self):
        """Dictionary cluster_id -> place_id or :data:`KEEP_NOISY`."""
        return dict(zip(self.cluster_ids.tolist(), self.place_ids.tolist()))

    def to_frame(self):
        """Return :class:`pandas.DataFrame` with columns cluster_id, place_id, distance_km."""
        return pd.DataFrame({'cluster_id': self.cluster_ids.astype(str), 'place_id': self.place_ids.astype(str), 'distance_km': self.distances})

    def write_csv(self, filename):
        """Write plan to CSV file."""
        self.to_frame().to_csv(filename, index=False, na_rep='')

    @classmethod
    def read_csv(cls, filename, mode='none'):
        """Read plan from CSV file written by :meth:`write_csv`."""
        table = pd.read_csv(filename, dtype={'cluster_id': str, 'place_id': str}, keep_default_na=False, na_values={'distance_km': ['']})
        return cls(table['cluster_id'], table['place_id'], table['distance_km'], mode=mode)

    def apply(self, clusters, places):
        """
        Return copy of ``clusters`` (or cluster stats) with relocated coordinates.
        Column 'location_id' holds the assigned place_id (or cluster_id if kept noisy),
        used to look up keyed layers (demographics, embeddings); column 'relocated' flags relocated clusters.
        """
        toret = clusters.copy().reset_index(drop=True)
        assignments = self.assignments
        place_ids = np.array([assignments.get(cluster_id, KEEP_NOISY) for cluster_id in toret['cluster_id']], dtype=object)
        relocated = place_ids != KEEP_NOISY
        coords = places.drop_duplicates('place_id').set_index('place_id')
        if relocated.any():
            toret.loc[relocated, 'lat'] = coords.loc[place_ids[relocated], 'lat'].to_numpy()
            toret.loc[relocated, 'lon'] = coords.loc[place_ids[relocated], 'lon'].to_numpy()
        toret['location_id'] = np.where(relocated, place_ids, toret['cluster_id'].to_numpy())
        toret['relocated'] = relocated
        return toret

    def counts(self, settlement=None):
        """Return number of relocated clusters per settlement, given ``settlement`` of each cluster."""
        relocated = self.relocated
        if settlement is None:
            return {'all': int(relocated.sum())}
        settlement = np.asarray(settlement)
        return {name: int(relocated[settlement == name].sum()) for name in SETTLEMENTS}


def relocate(clusters, places, mode='ruc', radii_km=None):
    """
    Greedy relocation of noisy cluster locations onto same-settlement populated places.
    Each cluster's candidates are the places of the same settlement within its radius;
    the unassigned cluster with fewest remaining candidates (ties: smaller cluster_id) is assigned its nearest remaining
    candidate (ties: smaller place_id), which is then removed; this is repeated until no cluster is left.
    Clusters without remaining candidates keep their noisy location.

    Parameters
    ----------
    clusters : pandas.DataFrame
        With columns cluster_id, lat, lon, settlement.

    places : pandas.DataFrame
        With columns place_id, lat, lon, kind.

    mode : str, default='ruc'
        'none' (no relocation), 'rc' (rural clusters only) or 'ruc' (rural and urban clusters).

    radii_km : dict, default=None
        Search radius per settlement, defaults to :data:`RELOCATION_RADII_KM`.

    Returns
    -------
    plan : RelocationPlan
    """
    if mode not in RELOCATION_MODES:
        raise ValueError('mode must be one of {}, found {}'.format(RELOCATION_MODES, mode))
    radii_km = {**RELOCATION_RADII_KM, **(radii_km or {})}
    cluster_ids = clusters['cluster_id'].to_numpy()
    ncluster = len(cluster_ids)
    place_ids = np.full(ncluster, KEEP_NOISY, dtype=object)
    distances = np.full(ncluster, np.nan, dtype='f8')
    if mode == 'none' or not ncluster:
        return RelocationPlan(cluster_ids, place_ids, distances, mode=mode)

    settlement = clusters['settlement'].to_numpy()
    place_settlement = settlement_of_kind(places['kind'].to_numpy())
    all_place_ids = places['place_id'].to_numpy()
    movable = np.ones(ncluster, dtype='?') if mode == 'ruc' else settlement == 'rural'
    # candidates[i] = (place positions, distances), place positions in places
    candidates = [None] * ncluster
    for name in SETTLEMENTS:
        positions = np.flatnonzero(place_settlement == name)
        index = SpatialIndex(positions, places['lat'].to_numpy()[positions], places['lon'].to_numpy()[positions])
        for icluster in np.flatnonzero(movable & (settlement == name)):
            q = (clusters['lat'].iloc[icluster], clusters['lon'].iloc[icluster])
            found = index.radius_indices(q, radii_km[name])
            candidates[icluster] = (positions[found], index.distances(q, found))

    place_to_clusters = {}
    remaining = np.zeros(ncluster, dtype='i8')
    for icluster in np.flatnonzero(movable):
        remaining[icluster] = candidates[icluster][0].size
        for position in candidates[icluster][0]:
            place_to_clusters.setdefault(position, []).append(icluster)
    # cluster_id rank for tie-breaks
    rank = np.empty(ncluster, dtype='i8')
    rank[sorted(range(ncluster), key=lambda i: cluster_ids[i])] = np.arange(ncluster)
    available = np.ones(len(all_place_ids), dtype='?')
    todo = movable.copy()
    while todo.any():
        key = np.where(todo, remaining * ncluster + rank, np.iinfo('i8').max)
        icluster = np.argmin(key)
        todo[icluster] = False
        if remaining[icluster] == 0:
            continue
        positions, dists = candidates[icluster]
        mask = available[positions]
        positions, dists = positions[mask], dists[mask]
        best = dists == dists.min()
        position = min(positions[best].tolist(), key=lambda p: all_place_ids[p])
        place_ids[icluster] = all_place_ids[position]
        distances[icluster] = dists[positions == position][0]
        available[position] = False
        for other in place_to_clusters[position]:
            remaining[other] -= 1
    plan = RelocationPlan(cluster_ids, place_ids, distances, mode=mode)
    counts = plan.counts(settlement)
    logger.info('Relocation mode {}: {:d} urban and {:d} rural cluster(s) relocated out of {:d}.'.format(mode, counts['urban'], counts['rural'], ncluster))
    return plan


def gini(values):
    """
    Gini coefficient of nonnegative ``values``, :math:`\\sum_{ij} |x_i - x_j| / (2 n^2 \\bar{x})`.
    """
    values = np.sort(np.asarray(values, dtype='f8').ravel())
    if np.any(values < 0.):
        raise ValueError('values must be nonnegative')
    total = values.sum()
    if not values.size or total == 0.:
        raise AllZeroError('Gini coefficient is undefined for all-zero values')
    n = values.size
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) * values) / (n * total))


def discretize_equal_width(values, k=10):
    """
    Return bin index in [0, k - 1] of each value, for k bins of equal width over [min, max];
    bins are left-closed, the right edge being included in the last bin.
    If all values are equal, all fall in bin 0.
    """
    if k < 2:
        raise ValueError('k must be >= 2, found {}'.format(k))
    values = np.asarray(values, dtype='f8')
    low, high = values.min(initial=np.inf), values.max(initial=-np.inf)
    if not values.size or high == low:
        if values.size: logger.warning('Constant values, all in bin 0.')
        return np.zeros(values.shape, dtype='i8')
    return np.clip(np.floor((values - low) / (high - low) * k).astype('i8'), 0, k - 1)


def summarize_ground_truth(stats, places=None, plan=None):
    """
    Summary of the ground truth of a country: clusters per year, settlement counts and shares,
    range, mean and standard deviation of mean IWI and of IWI standard deviation,
    Pearson correlation between both, Gini coefficient of mean IWI,
    populated places per settlement, and relocated clusters per settlement.

    Parameters
    ----------
    stats : pandas.DataFrame
        Cluster statistics, see :func:`aggregate_clusters`.

    places : pandas.DataFrame, default=None
        Populated places.

    plan : RelocationPlan, default=None
        Relocation plan.

    Returns
    -------
    summary : dict
    """
    mu, sigma = stats['mu'].to_numpy(), stats['sigma'].to_numpy()
    settlement = stats['settlement'].to_numpy()
    toret = {'n_clusters': len(stats),
             'clusters_per_year': {str(year): int((stats['year'] == year).sum()) for year in sorted(set(stats['year'].tolist()))},
             'settlement': {name: {'count': int((settlement == name).sum()), 'share': float((settlement == name).mean()) if len(stats) else np.nan} for name in SETTLEMENTS}}
    for name, values in [('mu', mu), ('sigma', sigma)]:
        toret[name] = {'min': float(values.min()), 'max': float(values.max()), 'mean': float(values.mean()), 'std': float(values.std())} if values.size else None
    toret['pearson_mu_sigma'] = float(np.corrcoef(mu, sigma)[0, 1]) if mu.size > 1 and mu.std() > 0. and sigma.std() > 0. else None
    try:
        toret['gini_mu'] = gini(mu)
    except AllZeroError:
        toret['gini_mu'] = None
    if places is not None:
        place_settlement = settlement_of_kind(places['kind'].to_numpy())
        toret['places_per_settlement'] = {name: int((place_settlement == name).sum()) for name in SETTLEMENTS}
    if plan is not None:
        assignments = plan.assignments
        relocated = np.array([assignments.get(cluster_id, KEEP_NOISY) != KEEP_NOISY for cluster_id in stats['cluster_id']], dtype='?')
        toret['relocated'] = {name: {'count': int(relocated[settlement == name].sum()),
                                     'share': float(relocated[settlement == name].mean()) if (settlement == name).any() else None} for name in SETTLEMENTS}
        toret['relocation_mode'] = plan.mode
    return toret
