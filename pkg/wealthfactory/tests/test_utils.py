import numpy as np

from wealthfactory import setup_logging, utils


def test_coordinates():
    assert np.allclose(utils.wrap_longitude([-180., 180., 190., -190.]), [-180., -180., -170., 170.])
    position = utils.lonlat_to_cartesian([0., 90., 0.], [0., 0., 90.])
    assert np.allclose(position, [[1., 0., 0.], [0., 0., 1.], [0., 1., 0.]], atol=1e-12)
    assert np.allclose(np.sum(utils.lonlat_to_cartesian(*np.random.RandomState(seed=42).uniform(-80., 80., size=(2, 10)))**2, axis=-1), 1.)
    radius = 6371.
    assert np.allclose(utils.arc_to_chord(np.pi * radius / 3., radius), 1.)


def test_seed():
    assert utils.derive_seed(42, 0, 1) == utils.derive_seed(42, 0, 1)
    assert len({utils.derive_seed(42, run, candidate) for run in range(3) for candidate in range(10)}) == 30
    assert utils.digest(np.arange(10)) == utils.digest(np.arange(10))
    assert utils.digest(np.arange(10)) != utils.digest(np.arange(10.))


def test_json(tmp_path):
    obj = {'b': np.float64(1.5), 'a': [np.int64(2), np.nan], 'c': np.arange(3), 'd': np.bool_(True)}
    assert utils.dumps_json(obj) == utils.dumps_json(dict(reversed(list(obj.items()))))
    fn = tmp_path / 'sub' / 'test.json'
    utils.write_json(str(fn), obj)
    assert utils.read_json(str(fn)) == {'a': [2, None], 'b': 1.5, 'c': [0, 1, 2], 'd': True}


def test_rvs():
    rng = np.random.RandomState(seed=42)
    loc, scale = np.array([0., 50., 100., 30.]), np.array([10., 20., 5., 0.])
    samples = utils.truncnorm_rvs(0., 100., loc=np.repeat(loc, 10000), scale=np.repeat(scale, 10000), random_state=rng)
    assert samples.shape == (40000,)
    assert np.all((samples >= 0.) & (samples <= 100.))
    samples = samples.reshape(4, -1)
    assert np.all(samples[3] == 30.)
    assert np.allclose(samples[1].mean(), 50., atol=0.5)
    assert samples[0].mean() > 5.
    x = utils.sample_normal_standardized(25, rng)
    assert np.allclose([x.mean(), x.std()], [0., 1.], atol=1e-12)


if __name__ == '__main__':

    setup_logging()
    import tempfile, pathlib
    test_coordinates()
    test_seed()
    with tempfile.TemporaryDirectory() as tmp_dir:
        test_json(pathlib.Path(tmp_dir))
    test_rvs()
