"""A few utilities."""

import os
import json
import hashlib

import numpy as np
from scipy import stats

from mpytools.utils import mkdir, setup_logging, BaseClass


def wrap_longitude(lon):
    """
    Wrap longitude in :math:`[-180, 180[` degrees.

    Parameters
    ----------
    lon : float, array_like
        Longitude (degree).

    Returns
    -------
    lon : float, array
        Wrapped longitude.
    """
    return (np.asarray(lon, dtype='f8') + 180.) % 360. - 180.


def lonlat_to_cartesian(lat, lon, dtype=None):
    """
    Transform latitude, longitude into cartesian coordinates on the unit sphere.

    Parameters
    ----------
    lat : array of shape (N,)
        Latitude (degree).

    lon : array of shape (N,)
        Longitude (degree).

    dtype : numpy.dtype, default=None
        :class:`numpy.dtype` for returned array.

    Returns
    -------
    position : array of shape (N, 3)
        Position in cartesian coordinates.
    """
    conversion = np.pi / 180.
    lat, lon = np.broadcast_arrays(np.asarray(lat, dtype='f8'), np.asarray(lon, dtype='f8'))
    if dtype is None:
        dtype = lat.dtype
    position = np.empty(lat.shape + (3,), dtype=dtype)
    cos_lat = np.cos(lat * conversion)
    position[..., 0] = cos_lat * np.cos(lon * conversion)
    position[..., 1] = cos_lat * np.sin(lon * conversion)
    position[..., 2] = np.sin(lat * conversion)
    return position


def arc_to_chord(arc, radius):
    """Return the chord length subtending a great-circle arc of length ``arc`` on a sphere of radius ``radius``, in units of ``radius``."""
    return 2. * np.sin(np.minimum(np.asarray(arc, dtype='f8') / (2. * radius), np.pi / 2.))


def derive_seed(seed, *keys):
    """
    Derive an independent integer seed from ``seed`` and a sequence of integer ``keys``,
    e.g. ``derive_seed(seed, run, candidate, fold)``.
    """
    entropy = [int(seed)] + [int(key) for key in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


def digest(*arrays):
    """Return a short sha256 hex digest of input arrays (or strings), used to fingerprint data."""
    sha = hashlib.sha256()
    for array in arrays:
        if isinstance(array, str):
            sha.update(array.encode('utf-8'))
        else:
            array = np.ascontiguousarray(array)
            sha.update(str(array.dtype).encode('utf-8'))
            sha.update(array.tobytes())
    return sha.hexdigest()[:16]


def _to_json(value):
    # numpy scalars / arrays -> builtin types
    if isinstance(value, dict):
        return {str(key): _to_json(val) for key, val in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_json(val) for val in value]
    if isinstance(value, np.ndarray):
        return _to_json(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def dumps_json(obj):
    """Serialize ``obj`` to a JSON string, deterministically (sorted keys, non-finite floats as ``null``)."""
    return json.dumps(_to_json(obj), sort_keys=True, indent=1)


def write_json(filename, obj):
    """Write ``obj`` to JSON file ``filename``, creating the parent directory if needed."""
    dirname = os.path.dirname(filename)
    if dirname: mkdir(dirname)
    with open(filename, 'w', encoding='utf-8') as file:
        file.write(dumps_json(obj) + '\n')


def read_json(filename):
    """Read JSON file ``filename``."""
    with open(filename, 'r', encoding='utf-8') as file:
        return json.load(file)


def truncnorm_rvs(a, b, loc=0., scale=1., size=None, random_state=None):
    """
    Draw from a truncated normal distribution.

    Contrary to :class:`scipy.stats.truncnorm`, input ``a`` and ``b`` are *not* defined
    w.r.t. the *standard* normal, but to the (scaled) distribution,
    e.g. ``truncnorm_rvs(a=0., b=100., loc=mu, scale=sigma)`` for wealth scores.
    Where ``scale`` is 0, ``loc`` clipped to ``[a, b]`` is returned.

    Parameters
    ----------
    a : float
        Lower bound.

    b : float
        Upper bound.

    loc : float, array, default=0.
        Location (mean of the untruncated law).

    scale : float, array, default=1.
        Scale (standard deviation of the untruncated law).

    size : int, tuple, default=None
        Output shape; defaults to the broadcast shape of ``loc`` and ``scale``.

    random_state : int, numpy.random.RandomState, default=None
        Random state.

    Returns
    -------
    samples : array
    """
    loc, scale = np.broadcast_arrays(np.asarray(loc, dtype='f8'), np.asarray(scale, dtype='f8'))
    if size is None: size = loc.shape
    loc, scale = np.broadcast_to(loc, size), np.broadcast_to(scale, size)
    toret = np.array(np.clip(loc, a, b), dtype='f8')
    mask = scale > 0.
    if mask.any():
        # Rescale a and b to the standard distribution
        sa, sb = (a - loc[mask]) / scale[mask], (b - loc[mask]) / scale[mask]
        toret[mask] = stats.truncnorm.rvs(sa, sb, loc=loc[mask], scale=scale[mask], random_state=random_state)
    return toret


def sample_normal_standardized(size, rng):
    """Draw ``size`` normal variates, then shift and rescale them to zero mean and unit (population) standard deviation exactly."""
    x = rng.standard_normal(size)
    if size < 2:
        return np.zeros(size, dtype='f8')
    x = x - x.mean()
    return x / x.std()


__all__ = ['mkdir', 'setup_logging', 'BaseClass', 'derive_seed', 'digest', 'dumps_json', 'write_json', 'read_json']
