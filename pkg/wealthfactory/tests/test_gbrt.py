import numpy as np
import pytest
from scipy import stats

from wealthfactory import setup_logging
from wealthfactory.gbrt import Hyperparams, GBRTEnsemble, fit, predict, importance, NonPositiveWeightError, ColumnMismatchError


def stump_oracle(X, Y, w):
    # exhaustive weighted-best-stump search, no missing values
    best = None
    for icol in range(X.shape[1]):
        values = np.unique(X[:, icol])
        for low, high in zip(values[:-1], values[1:]):
            threshold = (low + high) / 2.
            left = X[:, icol] <= threshold
            gain = 0.
            for mask in [left, ~left]:
                gain += np.sum(np.sum(w[mask, None] * Y[mask], axis=0)**2) / w[mask].sum()
            if best is None or gain > best[0]:
                best = (gain, icol, threshold, left)
    gain, icol, threshold, left = best
    means = [np.sum(w[mask, None] * Y[mask], axis=0) / w[mask].sum() for mask in [left, ~left]]
    return icol, threshold, means


def test_stump():
    X = np.array([[1.], [2.], [3.], [4.]])
    Y = np.column_stack([[0., 0., 10., 10.], [1., 1., 1., 1.]])
    hp = Hyperparams(n_trees=1, max_depth=1, learning_rate=1., l2_leaf_reg=0., min_samples_leaf=1)
    model = fit(X, Y, hp=hp)
    assert np.allclose(model.base_prediction, [5., 1.])
    assert model.n_trees == 1
    tree = model.trees[0]
    assert tree['feature'][0] == 0 and tree['threshold'][0] == 2.5
    assert np.allclose(tree['value'][1:], [[-5., 0.], [5., 0.]])
    assert np.array_equal(predict(model, X), Y)
    assert importance(model).values.tolist() == [1.]

    rng = np.random.RandomState(seed=42)
    hp_boost = Hyperparams(n_trees=10, max_depth=3, learning_rate=0.3, l2_leaf_reg=1., min_samples_leaf=2)
    for idataset in range(50):
        n, nfeatures = rng.randint(10, 201), rng.randint(1, 6)
        X = rng.uniform(size=(n, nfeatures))
        Y = np.column_stack([rng.uniform(0., 100., n), rng.uniform(0., 30., n)])
        w = rng.uniform(0.5, 2., n)
        model = fit(X, Y, w=w, hp=hp)
        base = np.sum(w[:, None] * Y, axis=0) / w.sum()
        icol, threshold, means = stump_oracle(X, Y - base, w)
        tree = model.trees[0]
        assert tree['feature'][0] == icol
        assert np.allclose(tree['threshold'][0], threshold, rtol=0., atol=1e-10)
        assert np.allclose(tree['value'][1:], means, rtol=0., atol=1e-10)
        # training loss never increases
        model = fit(X, Y, w=w, hp=hp_boost)
        assert model.n_trees >= 1
        assert np.all(np.diff(model.train_loss) <= 1e-9 * model.train_loss[0])


def test_monotone_response():
    rng = np.random.RandomState(seed=42)
    x = np.sort(rng.uniform(size=60))
    level = np.floor(4. * x)
    Y = np.column_stack([20. + 10. * level, 5. + 2. * level])
    model = fit(x[:, None], Y, hp=Hyperparams(n_trees=5, max_depth=2, learning_rate=1., l2_leaf_reg=0., min_samples_leaf=1))
    pred = model.predict(x[:, None])
    assert np.allclose(pred, Y, atol=1e-8)
    grid = np.linspace(-0.5, 1.5, 201)[:, None]
    assert np.all(np.diff(model.predict(grid), axis=0) >= -1e-8)

    x = rng.uniform(-2., 2., 200)
    Y = np.column_stack([50. + 30. * np.tanh(x), 10. + 2. * x])
    model = fit(x[:, None], Y, hp=Hyperparams(n_trees=100, max_depth=3, learning_rate=0.1, min_samples_leaf=5))
    pred = model.predict(x[:, None])
    for itarget in range(2):
        assert stats.spearmanr(x, pred[:, itarget]).correlation > 0.99


def test_column_order():
    rng = np.random.RandomState(seed=42)
    X = rng.uniform(size=(200, 5))
    Y = np.column_stack([50. + 30. * np.tanh(2. * X[:, 1] - X[:, 3]), 10. + 5. * X[:, 0] + rng.normal(size=200)])
    names = ['a', 'b', 'c', 'd', 'e']
    hp = Hyperparams(n_trees=20, max_depth=3, learning_rate=0.2, min_samples_leaf=10)
    model = fit(X, Y, hp=hp, names=names)
    perm = np.array([3, 0, 4, 1, 2])
    model2 = fit(X[:, perm], Y, hp=hp, names=[names[i] for i in perm])
    assert model2.n_trees == model.n_trees
    assert np.allclose(model2.predict(X[:, perm]), model.predict(X), rtol=0., atol=1e-8)
    assert np.allclose(model2.importance().values, model.importance().values[perm], rtol=0., atol=1e-10)


def test_degenerate():
    X = np.random.RandomState(seed=42).uniform(size=(10, 2))
    model = fit(X, np.full((10, 2), 7.))
    assert model.n_trees == 0
    assert np.allclose(model.predict(X), 7.)
    assert importance(model).values.tolist() == [0., 0.]
    Y = np.column_stack([np.arange(10.), np.ones(10)])
    model = fit(X, Y, hp=Hyperparams(learning_rate=0.))
    assert model.n_trees == 0
    assert np.allclose(model.predict(X), [4.5, 1.])
    with pytest.raises(NonPositiveWeightError):
        fit(X, Y, w=np.zeros(10))
    with pytest.raises(ValueError):
        Hyperparams(subsample_rows=0.)
    with pytest.raises(ColumnMismatchError):
        model.predict(X[:, :1])


def make_data(n=120, nfeatures=4, seed=42):
    rng = np.random.RandomState(seed=seed)
    X = rng.normal(size=(n, nfeatures))
    mu = np.clip(50. + 20. * np.tanh(X[:, 0]) + rng.normal(scale=2., size=n), 0., 100.)
    sigma = np.clip(10. + 3. * X[:, 0] + rng.normal(scale=1., size=n), 0., None)
    X[rng.uniform(size=X.shape) < 0.1] = np.nan
    return X, np.column_stack([mu, sigma])


def test_fit(tmp_path):
    X, Y = make_data()
    hp = Hyperparams(n_trees=30, max_depth=3, learning_rate=0.2, min_samples_leaf=3)
    model = fit(X, Y, hp=hp)
    assert 0 < model.n_trees <= 30
    assert np.all(np.diff(model.train_loss) <= 1e-9 * model.train_loss[0])
    pred = model.predict(X)
    assert np.all((pred[:, 0] >= 0.) & (pred[:, 0] <= 100.)) and np.all(pred[:, 1] >= 0.)
    assert np.all(np.isfinite(model.predict(np.full((2, 4), np.nan))))
    perm = np.random.RandomState(seed=0).permutation(len(X))
    assert np.array_equal(model.predict(X[perm]), pred[perm])
    assert np.argmax(model.importance().values) == 0
    assert np.allclose(model.importance().values.sum(), 1.)
    assert model.to_json() == fit(X, Y, hp=hp).to_json()

    hp0 = Hyperparams(n_trees=10, max_depth=2, l2_leaf_reg=0.)
    w = np.random.RandomState(seed=1).uniform(0.5, 2., len(X))
    assert np.array_equal(fit(X, Y, w=w, hp=hp0).predict(X), fit(X, Y, w=2. * w, hp=hp0).predict(X))

    fn = str(tmp_path / 'model.json')
    model.save(fn)
    model2 = GBRTEnsemble.load(fn)
    assert np.array_equal(model2.predict(X), pred)
    assert model2.to_json() == model.to_json()

    model = fit(X, Y, hp=Hyperparams(n_trees=5, max_depth=2), joint=False)
    assert {tuple(tree['targets']) for tree in model.trees} == {(0,), (1,)}
    model = fit(X, Y, hp=Hyperparams(n_trees=5, max_depth=2, subsample_rows=0.8, subsample_cols=0.5, random_seed=3))
    assert model.to_json() == fit(X, Y, hp=Hyperparams(n_trees=5, max_depth=2, subsample_rows=0.8, subsample_cols=0.5, random_seed=3)).to_json()
    frame = model.importance().to_frame()
    assert frame['importance'].is_monotonic_decreasing
    assert set(model.importance().per_source(['a', 'a', 'b', 'b'])) == {'a', 'b'}


if __name__ == '__main__':

    setup_logging()
    import tempfile, pathlib
    test_stump()
    test_monotone_response()
    test_column_order()
    test_degenerate()
    with tempfile.TemporaryDirectory() as tmp_dir:
        test_fit(pathlib.Path(tmp_dir))
