"""Poverty maps: predictions of a trained model at all populated places, and their GeoJSON, CSV and SVG outputs."""

import io
import os
import json
import logging

import numpy as np
import pandas as pd
import matplotlib
from matplotlib.figure import Figure
from matplotlib.backends.backend_svg import FigureCanvasSVG

from mpytools import CurrentMPIComm

from . import utils
from .features import FeatureConfig, FeatureExtractor, LocationSet, assemble, standardize_per_year
from .gbrt import ColumnMismatchError
from .evalreport import SETTLEMENT_ROWS
from .utils import BaseClass


logger = logging.getLogger('PovertyMap')


POPULATION_FEATURE = 'pop_total_population_within_1.6km'
SETTLEMENT_COLORS = {'urban': 'C0', 'rural': 'C1'}


class DuplicatePlaceError(ValueError):

    """Error raised when a populated place identifier appears more than once."""


class PovertyMap(BaseClass):
    """
    Predicted mean and standard deviation of wealth at populated places.

    Attributes
    ----------
    place_ids : array
        Place identifiers.

    lat, lon : array
        Coordinates, in degrees.

    settlement : array
        'urban' or 'rural'.

    mu, sigma : array
        Predicted mean (in [0, 100]) and standard deviation (>= 0) of wealth.

    population : array
        Population within 1.6 km, NaN if unknown.
    """

    def __init__(self, place_ids, lat, lon, settlement, mu, sigma, population=None, model_fingerprint='', timestamp=None):
        self.place_ids = np.asarray(place_ids, dtype=object)
        self.lat, self.lon = np.asarray(lat, dtype='f8'), np.asarray(lon, dtype='f8')
        self.settlement = np.asarray(settlement, dtype=object)
        self.mu, self.sigma = np.asarray(mu, dtype='f8'), np.asarray(sigma, dtype='f8')
        if population is None: population = np.full(self.place_ids.size, np.nan)
        self.population = np.asarray(population, dtype='f8')
        self.model_fingerprint = str(model_fingerprint)
        self.timestamp = timestamp

    @property
    def size(self):
        return self.place_ids.size

    def __len__(self):
        return self.size

    def to_frame(self):
        """Return :class:`pandas.DataFrame` with columns place_id, lat, lon, settlement, mu, sigma, population."""
        return pd.DataFrame({'place_id': self.place_ids.astype(str), 'lat': self.lat, 'lon': self.lon, 'settlement': self.settlement,
                             'mu': self.mu, 'sigma': self.sigma, 'population': self.population})

    @classmethod
    def from_frame(cls, frame, **kwargs):
        return cls(frame['place_id'].to_numpy(), frame['lat'], frame['lon'], frame['settlement'].to_numpy(),
                   frame['mu'], frame['sigma'], population=frame['population'], **kwargs)

    def to_geojson(self):
        """
        Return GeoJSON FeatureCollection dictionary: one Point feature per place, coordinates (lon, lat),
        properties mu, sigma, settlement, population (``None`` if unknown).
        """
        features = []
        for index in range(self.size):
            population = None if np.isnan(self.population[index]) else float(self.population[index])
            features.append({'type': 'Feature', 'id': str(self.place_ids[index]),
                             'geometry': {'type': 'Point', 'coordinates': [float(self.lon[index]), float(self.lat[index])]},
                             'properties': {'mu': float(self.mu[index]), 'sigma': float(self.sigma[index]),
                                            'settlement': str(self.settlement[index]), 'population': population}})
        toret = {'type': 'FeatureCollection', 'features': features, 'model_fingerprint': self.model_fingerprint}
        if self.timestamp is not None: toret['timestamp'] = self.timestamp
        return toret

    @classmethod
    def from_geojson(cls, document):
        """Read map from GeoJSON dictionary (or string) written by :meth:`to_geojson`."""
        if isinstance(document, str): document = json.loads(document)
        if document.get('type') != 'FeatureCollection':
            raise ValueError('expected a FeatureCollection, found {}'.format(document.get('type')))
        columns = {name: [] for name in ['place_id', 'lat', 'lon', 'settlement', 'mu', 'sigma', 'population']}
        for feature in document['features']:
            if feature.get('type') != 'Feature' or feature['geometry']['type'] != 'Point':
                raise ValueError('expected Point features')
            lon, lat = feature['geometry']['coordinates'][:2]
            properties = feature['properties']
            population = properties.get('population', None)
            for name, value in zip(columns, [feature.get('id'), lat, lon, properties['settlement'], properties['mu'], properties['sigma'],
                                             np.nan if population is None else population]):
                columns[name].append(value)
        return cls(np.array(columns['place_id'], dtype=object), columns['lat'], columns['lon'], np.array(columns['settlement'], dtype=object),
                   columns['mu'], columns['sigma'], population=columns['population'],
                   model_fingerprint=document.get('model_fingerprint', ''), timestamp=document.get('timestamp', None))

    def write_geojson(self, filename):
        utils.mkdir(os.path.dirname(filename) or '.')
        with open(filename, 'w') as file:
            json.dump(self.to_geojson(), file, indent=1)

    @classmethod
    def read_geojson(cls, filename):
        with open(filename, 'r') as file:
            return cls.from_geojson(json.load(file))

    def write_csv(self, filename):
        utils.mkdir(os.path.dirname(filename) or '.')
        self.to_frame().to_csv(filename, index=False, na_rep='')

    @classmethod
    def read_csv(cls, filename):
        return cls.from_frame(pd.read_csv(filename, dtype={'place_id': str}, float_precision='round_trip'))


def _select_columns(matrix, names):
    # model column order
    lookup = {name: index for index, name in enumerate(matrix.names)}
    missing = [name for name in names if name not in lookup]
    if missing:
        raise ColumnMismatchError('features {} of the model are not computed for places'.format(missing[:5]))
    return matrix.values[:, [lookup[name] for name in names]]


@CurrentMPIComm.enable
def infer_places(model, bundle, cfg=None, year=None, extractor=None, mpicomm=None):
    """
    Predict wealth at every populated place of ``bundle``.

    Parameters
    ----------
    model : GBRTEnsemble
        Trained model.

    bundle : DatasetBundle
        Validated bundle.

    cfg : FeatureConfig, default=None
        Feature settings, those used for training.

    year : int, default=None
        Year of places, selecting nightlight pixels; defaults to the most recent nightlight year (or survey year).

    extractor : FeatureExtractor, default=None
        Prebuilt extractor for ``bundle``.

    Returns
    -------
    poverty_map : PovertyMap
    """
    places = bundle.places
    duplicated = places['place_id'][places['place_id'].duplicated()].unique().tolist()
    if duplicated:
        raise DuplicatePlaceError('duplicated place_id {}'.format(duplicated[:10]))
    if year is None:
        year = max(bundle.nightlight_years) if bundle.nightlight_years else max(bundle.years)
    embeddings = any(name.startswith('emb_') for name in model.names)
    extractor = extractor or FeatureExtractor(bundle, cfg=cfg or FeatureConfig())
    matrix = assemble(LocationSet.from_places(places, year), bundle, embeddings=embeddings, extractor=extractor, mpicomm=mpicomm)
    if POPULATION_FEATURE in matrix.names:
        population = matrix.values[:, matrix.names.index(POPULATION_FEATURE)]
    else:
        population = np.full(len(matrix), np.nan)
    pred = model.predict(_select_columns(standardize_per_year(matrix), model.names))
    toret = PovertyMap(places['place_id'].to_numpy(), places['lat'], places['lon'], bundle.place_settlement(), pred[:, 0], pred[:, 1],
                       population=population, model_fingerprint=utils.digest(model.to_json()))
    if mpicomm.rank == 0:
        logger.info('Predicted wealth at {:d} places (year {:d}), mean {:.2f}.'.format(toret.size, year, np.mean(toret.mu) if toret.size else np.nan))
    return toret


def scatter_limits(values, margin=0.05):
    """Return (low, high) covering ``values`` with a relative ``margin`` of their extent on each side."""
    values = np.asarray(values, dtype='f8')
    low, high = np.min(values), np.max(values)
    extent = high - low
    if extent == 0.: extent = abs(high) or 1.
    return low - margin * extent, high + margin * extent


def _fit_curve(x, y, xlim, npoints=100):
    degree = min(2, np.unique(x).size - 1)
    coeffs = np.polynomial.polynomial.polyfit(x, y, degree)
    low, high = (np.min(x), np.max(x)) if degree > 0 else xlim
    xs = np.linspace(low, high, npoints)
    return xs, np.polynomial.polynomial.polyval(xs, coeffs)


def render_scatter(mu, sigma=None, settlement=None, filename=None, xlabel='mean IWI', ylabel='std IWI', title=None):
    """
    Scatter plot of standard deviation versus mean of wealth, colored by settlement, with per-settlement polynomial fits
    (degree 2, lower if fewer distinct points).

    Parameters
    ----------
    mu : array, PovertyMap, pandas.DataFrame
        Mean wealth; or map / table with mu, sigma, settlement.

    sigma : array, default=None
        Standard deviation of wealth.

    settlement : array, default=None
        'urban' or 'rural'; all points in one group 'all' if ``None``.

    filename : str, default=None
        If not ``None``, write SVG to this file.

    Returns
    -------
    svg : str
        SVG document; points of each group are in element 'points-<group>', fit curves in 'fit-<group>'.
    """
    if isinstance(mu, PovertyMap): mu = mu.to_frame()
    if isinstance(mu, pd.DataFrame):
        mu, sigma, settlement = mu['mu'], mu['sigma'], mu['settlement']
    mu, sigma = np.asarray(mu, dtype='f8'), np.asarray(sigma, dtype='f8')
    if not mu.size:
        raise ValueError('at least one point is required')
    settlement = np.full(mu.size, 'all', dtype=object) if settlement is None else np.asarray(settlement, dtype=object)
    groups = [name for name in SETTLEMENT_ROWS + ('all',) if np.any(settlement == name)]
    xlim, ylim = scatter_limits(mu), scatter_limits(sigma)
    with matplotlib.rc_context({'svg.hashsalt': 'wealthfactory', 'svg.fonttype': 'none'}):
        fig = Figure(figsize=(5, 4))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot(111)
        for name in groups:
            mask = settlement == name
            color = SETTLEMENT_COLORS.get(name, 'k')
            ax.scatter(mu[mask], sigma[mask], s=6, color=color, alpha=0.6, label=name).set_gid('points-{}'.format(name))
            xs, ys = _fit_curve(mu[mask], sigma[mask], xlim)
            ax.plot(xs, ys, color=color, lw=1.5)[0].set_gid('fit-{}'.format(name))
        ax.set_xlim(*xlim)
        ax.set_ylim(*ylim)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title is not None: ax.set_title(title)
        ax.legend(loc='upper left', frameon=False)
        buffer = io.StringIO()
        fig.savefig(buffer, format='svg', metadata={'Date': None})
    toret = buffer.getvalue()
    if filename is not None:
        utils.mkdir(os.path.dirname(filename) or '.')
        with open(filename, 'w') as file:
            file.write(toret)
    return toret


def sample_households(poverty_map, n=25, seed=0):
    """
    Draw synthetic households at each place, wealth from a normal law of the place's predicted mean and standard deviation truncated to [0, 100].

    Returns
    -------
    households : pandas.DataFrame
        Columns place_id, household, iwi.
    """
    rng = np.random.RandomState(seed=seed)
    loc, scale = np.repeat(poverty_map.mu, n), np.repeat(poverty_map.sigma, n)
    iwi = utils.truncnorm_rvs(0., 100., loc=loc, scale=scale, random_state=rng) if loc.size else np.empty(0)
    return pd.DataFrame({'place_id': np.repeat(poverty_map.place_ids.astype(str), n), 'household': np.tile(np.arange(n), poverty_map.size), 'iwi': iwi})
