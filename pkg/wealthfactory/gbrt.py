"""
Multi-target gradient-boosted regression trees (squared loss) predicting the mean and standard deviation
of wealth jointly, with sample weights and learned routing of missing values.
"""

import logging
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd

from . import utils
from .utils import BaseClass


logger = logging.getLogger('GBRT')


MODEL_FORMAT = 'wealthfactory.gbrt'
MODEL_VERSION = 1
TARGET_NAMES = ('mu', 'sigma')
# relative SSE reduction a split must achieve
MIN_RELATIVE_GAIN = 1e-12


class NonPositiveWeightError(ValueError):

    """Error raised when a sample weight is not strictly positive."""


class ColumnMismatchError(ValueError):

    """Error raised when features do not match the model column manifest."""


@dataclass(frozen=True)
class Hyperparams:
    """Boosting hyperparameters."""

    n_trees: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    l2_leaf_reg: float = 3.
    subsample_rows: float = 1.
    subsample_cols: float = 1.
    random_seed: int = 0

    def __post_init__(self):
        for name in ['n_trees', 'max_depth', 'min_samples_leaf', 'random_seed']:
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ['learning_rate', 'l2_leaf_reg', 'subsample_rows', 'subsample_cols']:
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.n_trees < 0: raise ValueError('n_trees must be >= 0, found {}'.format(self.n_trees))
        if self.max_depth < 0: raise ValueError('max_depth must be >= 0, found {}'.format(self.max_depth))
        if self.min_samples_leaf < 1: raise ValueError('min_samples_leaf must be >= 1, found {}'.format(self.min_samples_leaf))
        if self.learning_rate < 0.: raise ValueError('learning_rate must be >= 0, found {}'.format(self.learning_rate))
        if self.l2_leaf_reg < 0.: raise ValueError('l2_leaf_reg must be >= 0, found {}'.format(self.l2_leaf_reg))
        for name in ['subsample_rows', 'subsample_cols']:
            if not 0. < getattr(self, name) <= 1.:
                raise ValueError('{} must be in (0, 1], found {}'.format(name, getattr(self, name)))

    def to_dict(self):
        return asdict(self)


@dataclass
class FeatureImportance:
    """Total squared-error reduction per feature, normalized to sum 1 (all zeros without split)."""

    names: list
    values: np.ndarray

    def to_frame(self):
        """Return :class:`pandas.DataFrame` with columns name, importance, sorted by decreasing importance (stable)."""
        frame = pd.DataFrame({'name': self.names, 'importance': self.values})
        return frame.sort_values('importance', ascending=False, kind='mergesort').reset_index(drop=True)

    def per_source(self, sources):
        """Return importance summed per source, given ``sources`` of each feature."""
        toret = {}
        for source, value in zip(sources, self.values):
            toret[source] = toret.get(source, 0.) + float(value)
        return toret


def _best_split(X, weighted_residuals, weights, idx, cols, min_samples_leaf):
    # Exhaustive search over columns x sorted positions x missing direction
    # idx: (ncols, m) node rows sorted by each column, missing values last
    ncols, m = idx.shape
    xs = X[idx, cols[:, None]]
    valid = ~np.isnan(xs)
    nvalid = valid.sum(axis=1)
    nmissing = m - nvalid
    wr = weights[idx]
    gr = weighted_residuals[idx]
    cw = np.cumsum(wr, axis=1)
    cg = np.cumsum(gr, axis=1)
    total_w, total_g = cw[:, -1], cg[:, -1]
    missing_w = np.where(nmissing > 0, np.sum(wr * ~valid, axis=1), 0.)
    missing_g = np.where(nmissing[:, None] > 0, np.sum(gr * ~valid[..., None], axis=1), 0.)
    # split after position k: k + 1 first non-missing rows go left
    k = np.arange(m - 1)
    candidate = (k[None, :] < nvalid[:, None] - 1)
    with np.errstate(invalid='ignore'):
        candidate &= xs[:, :-1] < xs[:, 1:]
    nleft_valid = k[None, :] + 1
    gains = np.full((ncols, m - 1, 2), -np.inf)
    with np.errstate(invalid='ignore', divide='ignore'):
        base = np.sum(total_g**2, axis=-1) / total_w
        for direction, missing_left in enumerate([True, False]):
            wl, gl, nl = cw[:, :-1], cg[:, :-1], nleft_valid
            if missing_left:
                wl, gl, nl = wl + missing_w[:, None], gl + missing_g[:, None, :], nl + nmissing[:, None]
            wr_, gr_ = total_w[:, None] - wl, total_g[:, None, :] - gl
            gain = np.sum(gl**2, axis=-1) / wl + np.sum(gr_**2, axis=-1) / wr_ - base[:, None]
            ok = candidate & (nl >= min_samples_leaf) & (m - nl >= min_samples_leaf)
            gains[..., direction] = np.where(ok, gain, -np.inf)
    best = np.argmax(gains)
    icol, position, direction = np.unravel_index(best, gains.shape)
    gain = gains[icol, position, direction]
    if not np.isfinite(gain):
        return None
    low, high = xs[icol, position], xs[icol, position + 1]
    threshold = (low + high) / 2.
    if not (low <= threshold < high):
        threshold = low
    if nmissing[icol] > 0:
        missing_left = direction == 0
    else:
        # no missing value seen: heavier child, ties left
        wl = cw[icol, position]
        missing_left = bool(wl >= total_w[icol] - wl)
    return int(icol), float(threshold), bool(missing_left), float(gain)


def _grow_tree(X, residuals, weights, idx, cols, hp):
    # Depth-first growth; returns dictionary of node arrays
    weighted_residuals = weights[:, None] * residuals
    go_left = np.zeros(X.shape[0], dtype='?')
    nodes = {name: [] for name in ['feature', 'threshold', 'missing_left', 'left', 'right', 'value', 'gain']}

    def grow(idx, depth):
        node = len(nodes['feature'])
        rows = idx[0]
        w = weights[rows].sum()
        g = weighted_residuals[rows].sum(axis=0)
        for name, default in [('feature', -1), ('threshold', np.nan), ('missing_left', False), ('left', -1), ('right', -1), ('gain', 0.)]:
            nodes[name].append(default)
        nodes['value'].append(g / (w + hp.l2_leaf_reg))
        if depth >= hp.max_depth or rows.size < 2 * hp.min_samples_leaf:
            return node
        raw = np.sum(weights[rows, None] * residuals[rows]**2)
        sse = raw - np.sum(g**2) / w
        if not sse > 1e-12 * raw:
            return node
        split = _best_split(X, weighted_residuals, weights, idx, cols, hp.min_samples_leaf)
        if split is None or not split[-1] > MIN_RELATIVE_GAIN * sse:
            return node
        icol, threshold, missing_left, gain = split
        x = X[rows, cols[icol]]
        go_left[rows] = (x <= threshold) | (np.isnan(x) & missing_left)
        mask = go_left[idx]
        nleft = int(mask[0].sum())
        idx_left, idx_right = idx[mask].reshape(idx.shape[0], nleft), idx[~mask].reshape(idx.shape[0], rows.size - nleft)
        nodes['feature'][node], nodes['threshold'][node], nodes['missing_left'][node], nodes['gain'][node] = int(cols[icol]), threshold, missing_left, gain
        nodes['left'][node] = grow(idx_left, depth + 1)
        nodes['right'][node] = grow(idx_right, depth + 1)
        return node

    grow(idx, 0)
    return {'feature': np.array(nodes['feature'], dtype='i8'), 'threshold': np.array(nodes['threshold'], dtype='f8'),
            'missing_left': np.array(nodes['missing_left'], dtype='?'), 'left': np.array(nodes['left'], dtype='i8'),
            'right': np.array(nodes['right'], dtype='i8'), 'value': np.array(nodes['value'], dtype='f8').reshape(len(nodes['feature']), residuals.shape[1]),
            'gain': np.array(nodes['gain'], dtype='f8')}


def _apply_tree(tree, X):
    # Return leaf values of each row of X
    feature, threshold, missing_left, left, right = tree['feature'], tree['threshold'], tree['missing_left'], tree['left'], tree['right']
    node = np.zeros(X.shape[0], dtype='i8')
    active = np.flatnonzero(feature[node] >= 0)
    while active.size:
        current = node[active]
        x = X[active, feature[current]]
        with np.errstate(invalid='ignore'):
            to_left = np.where(np.isnan(x), missing_left[current], x <= threshold[current])
        node[active] = np.where(to_left, left[current], right[current])
        active = active[feature[node[active]] >= 0]
    return tree['value'][node]


class GBRTEnsemble(BaseClass):
    """
    Fitted ensemble: base prediction (weighted training mean of each target) plus shrunk tree contributions.
    Each tree predicts the targets listed in its 'targets' entry (both for joint trees).
    """

    def __init__(self, names, base_prediction, learning_rate, trees=None, hyperparams=None, train_loss=None,
                 target_names=TARGET_NAMES, bounds=None):
        self.names = list(names)
        self.base_prediction = np.asarray(base_prediction, dtype='f8')
        self.learning_rate = float(learning_rate)
        self.trees = list(trees or [])
        self.hyperparams = dict(hyperparams or {})
        self.train_loss = [float(loss) for loss in (train_loss or [])]
        self.target_names = list(target_names)[:self.base_prediction.size]
        if bounds is None:
            bounds = [(0., 100.), (0., None)] if self.target_names == list(TARGET_NAMES) else [(None, None)] * self.base_prediction.size
        self.bounds = [tuple(bound) for bound in bounds]

    @property
    def n_trees(self):
        return len(self.trees)

    def _as_array(self, X):
        if hasattr(X, 'names') and hasattr(X, 'values'):
            if list(X.names) != self.names:
                raise ColumnMismatchError('feature columns do not match the model manifest ({:d} vs {:d} columns)'.format(len(X.names), len(self.names)))
            X = X.values
        X = np.asarray(X, dtype='f8')
        if X.ndim != 2 or X.shape[1] != len(self.names):
            raise ColumnMismatchError('expected {:d} feature columns, found array of shape {}'.format(len(self.names), X.shape))
        return X

    def predict_raw(self, X):
        """Return unclipped predictions, array of shape (n, n_targets)."""
        X = self._as_array(X)
        toret = np.tile(self.base_prediction, (X.shape[0], 1))
        for tree in self.trees:
            toret[:, tree['targets']] += self.learning_rate * _apply_tree(tree, X)
        return toret

    def predict(self, X):
        """
        Predict targets.

        Parameters
        ----------
        X : FeatureMatrix, array of shape (n, n_features)
            Features, in the model column order.

        Returns
        -------
        Y : array of shape (n, n_targets)
            Predictions, the mean clipped to [0, 100] and the standard deviation to >= 0.
        """
        toret = self.predict_raw(X)
        for itarget, (low, high) in enumerate(self.bounds):
            if low is not None: toret[:, itarget] = np.maximum(toret[:, itarget], low)
            if high is not None: toret[:, itarget] = np.minimum(toret[:, itarget], high)
        return toret

    def importance(self):
        """Return :class:`FeatureImportance`."""
        gains = np.zeros(len(self.names), dtype='f8')
        for tree in self.trees:
            internal = tree['feature'] >= 0
            np.add.at(gains, tree['feature'][internal], tree['gain'][internal])
        total = gains.sum()
        return FeatureImportance(list(self.names), gains / total if total > 0. else gains)

    def __getstate__(self):
        trees = []
        for tree in self.trees:
            tree = {name: (value.tolist() if isinstance(value, np.ndarray) else value) for name, value in tree.items()}
            tree['threshold'] = [None if np.isnan(t) else t for t in tree['threshold']]
            trees.append(tree)
        return {'format': MODEL_FORMAT, 'version': MODEL_VERSION, 'names': self.names, 'base_prediction': self.base_prediction.tolist(),
                'learning_rate': self.learning_rate, 'trees': trees, 'targets': self.target_names,
                'bounds': [list(bound) for bound in self.bounds], 'hyperparams': self.hyperparams, 'train_loss': self.train_loss}

    def __setstate__(self, state):
        if state.get('format', None) != MODEL_FORMAT:
            raise ValueError('not a {} model file'.format(MODEL_FORMAT))
        if state['version'] > MODEL_VERSION:
            raise ValueError('model version {} is newer than supported version {}'.format(state['version'], MODEL_VERSION))
        trees = []
        for tree in state['trees']:
            trees.append({'feature': np.array(tree['feature'], dtype='i8'),
                          'threshold': np.array([np.nan if t is None else t for t in tree['threshold']], dtype='f8'),
                          'missing_left': np.array(tree['missing_left'], dtype='?'),
                          'left': np.array(tree['left'], dtype='i8'), 'right': np.array(tree['right'], dtype='i8'),
                          'value': np.array(tree['value'], dtype='f8').reshape(len(tree['feature']), len(tree['targets'])),
                          'gain': np.array(tree['gain'], dtype='f8'), 'targets': list(tree['targets'])})
        self.__init__(state['names'], state['base_prediction'], state['learning_rate'], trees=trees, hyperparams=state['hyperparams'],
                      train_loss=state['train_loss'], target_names=state['targets'], bounds=state['bounds'])

    def to_json(self):
        """Return model as a deterministic JSON string."""
        return utils.dumps_json(self.__getstate__())

    def save(self, filename):
        """Save model to JSON file ``filename``."""
        utils.write_json(filename, self.__getstate__())

    @classmethod
    def load(cls, filename):
        """Load model saved with :meth:`save`."""
        new = cls.__new__(cls)
        new.__setstate__(utils.read_json(filename))
        return new


def _weighted_loss(Y, F, w):
    return float(np.sum(w[:, None] * (Y - F)**2))


def fit(X, Y, w=None, hp=None, names=None, joint=True):
    """
    Fit gradient-boosted regression trees.

    Parameters
    ----------
    X : FeatureMatrix, array of shape (n, n_features)
        Features, NaN for missing values.

    Y : array of shape (n, n_targets)
        Targets, (mean, standard deviation) of IWI per row.

    w : array, default=None
        Positive sample weights, defaults to 1.

    hp : Hyperparams, dict, default=None
        Hyperparameters.

    names : list, default=None
        Feature names, taken from ``X`` if :class:`features.FeatureMatrix`.

    joint : bool, default=True
        If ``True``, trees share their structure across targets (vector leaves);
        else one sequence of single-target trees is fitted per target.

    Returns
    -------
    model : GBRTEnsemble
    """
    if isinstance(hp, dict): hp = Hyperparams(**hp)
    hp = hp or Hyperparams()
    if hasattr(X, 'names') and hasattr(X, 'values'):
        names = list(X.names) if names is None else names
        X = X.values
    X = np.asarray(X, dtype='f8')
    Y = np.asarray(Y, dtype='f8')
    if Y.ndim == 1: Y = Y[:, None]
    n = X.shape[0]
    if names is None:
        names = ['x{:d}'.format(i) for i in range(X.shape[1])]
    if X.ndim != 2 or len(names) != X.shape[1]:
        raise ColumnMismatchError('expected {:d} feature columns, found array of shape {}'.format(len(names), X.shape))
    if Y.shape[0] != n or n < 2:
        raise ValueError('X and Y must have the same number (>= 2) of rows, found {:d} and {:d}'.format(n, Y.shape[0]))
    if not np.all(np.isfinite(Y)):
        raise ValueError('targets must be finite')
    w = np.ones(n, dtype='f8') if w is None else np.asarray(w, dtype='f8')
    if w.shape != (n,):
        raise ValueError('weights must be of shape ({:d},), found {}'.format(n, w.shape))
    if not np.all(np.isfinite(w) & (w > 0.)):
        raise NonPositiveWeightError('sample weights must be > 0')
    ntargets = Y.shape[1]
    base = np.sum(w[:, None] * Y, axis=0) / w.sum()
    target_names = list(TARGET_NAMES) if ntargets == len(TARGET_NAMES) else ['y{:d}'.format(i) for i in range(ntargets)]
    model = GBRTEnsemble(names, base, hp.learning_rate, hyperparams=hp.to_dict(), target_names=target_names)
    F = np.tile(base, (n, 1))
    model.train_loss.append(_weighted_loss(Y, F, w))
    if np.all(Y == Y[0]):
        logger.warning('Degenerate targets (all identical): ensemble reduces to the base prediction.')
        return model
    if hp.learning_rate == 0. or hp.n_trees == 0:
        return model

    rng = np.random.RandomState(seed=hp.random_seed)
    # rows sorted by each column, missing values (NaN) last
    order = np.argsort(X, axis=0, kind='stable').T
    deterministic = hp.subsample_rows == 1. and hp.subsample_cols == 1.
    nrows = max(2, int(round(hp.subsample_rows * n)))
    ncols = max(1, int(round(hp.subsample_cols * X.shape[1])))
    groups = [list(range(ntargets))] if joint else [[itarget] for itarget in range(ntargets)]
    for targets in groups:
        for itree in range(hp.n_trees):
            cols = np.arange(X.shape[1]) if ncols == X.shape[1] else np.sort(rng.choice(X.shape[1], size=ncols, replace=False))
            idx = order[cols]
            if nrows < n:
                selected = np.zeros(n, dtype='?')
                selected[rng.choice(n, size=nrows, replace=False)] = True
                idx = idx[selected[idx]].reshape(cols.size, nrows)
            residuals = Y[:, targets] - F[:, targets]
            tree = _grow_tree(X, residuals, w, idx, cols, hp)
            if tree['feature'][0] < 0:
                # root not split
                if deterministic: break
                continue
            tree['targets'] = list(targets)
            F[:, targets] += hp.learning_rate * _apply_tree(tree, X)
            model.trees.append(tree)
            model.train_loss.append(_weighted_loss(Y, F, w))
    logger.debug('Fitted {:d} trees, training loss {:.4g} -> {:.4g}.'.format(model.n_trees, model.train_loss[0], model.train_loss[-1]))
    return model


def predict(m, X):
    """Predict targets of features ``X`` with :class:`GBRTEnsemble` ``m``, see :meth:`GBRTEnsemble.predict`."""
    return m.predict(X)


def importance(m):
    """Return :class:`FeatureImportance` of :class:`GBRTEnsemble` ``m``."""
    return m.importance()
