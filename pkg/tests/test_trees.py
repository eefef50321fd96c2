import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import blobs
from pki_apt.errors import ConfigError, DimensionMismatch
from pki_apt.trees import (
    BoostParams,
    DecisionTree,
    ForestParams,
    GradientBoostedModel,
    RandomForest,
    TreeParams,
    cart_fit,
    gbt_fit,
    rf_fit,
    tree_predict,
)

TOY_X = np.array([[1.0], [2.0], [3.0], [4.0]])
TOY_Y = np.array([0, 0, 1, 1])


def gini(labels, m):
    n = len(labels)
    if n == 0:
        return 0.0
    return 1.0 - sum((labels.count(c) / n) ** 2 for c in range(m))


def best_root_split(x, y, m):
    """Exhaustive Gini search; ties to the lowest feature, then threshold."""
    y = y.tolist()
    n = len(y)
    best = (0.0, -1, 0.0)
    parent = gini(y, m)
    for j in range(x.shape[1]):
        vals = sorted(set(x[:, j].tolist()))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left = [y[i] for i in range(n) if x[i, j] <= thr]
            right = [y[i] for i in range(n) if x[i, j] > thr]
            gain = parent - len(left) / n * gini(left, m) - len(right) / n * gini(right, m)
            if gain > best[0] + 1e-12:
                best = (gain, j, thr)
    return best


def test_threshold_toy():
    t = cart_fit(x=TOY_X, y=TOY_Y, n_classes=2)
    assert int((~t.is_leaf()).sum()) == 1
    assert t.feature[0] == 0 and t.threshold[0] == 2.5
    assert np.array_equal(t.predict(TOY_X), TOY_Y)
    labels, counts = tree_predict(t, TOY_X)
    assert np.array_equal(labels, TOY_Y) and counts.sum(axis=1).tolist() == [2, 2, 2, 2]


def test_pure_labels_single_leaf():
    t = cart_fit(x=TOY_X, y=np.zeros(4, dtype=int), n_classes=2)
    assert t.n_nodes == 1


def test_constant_feature_single_leaf_majority():
    t = cart_fit(x=np.ones((5, 1)), y=np.array([1, 1, 1, 0, 0]), n_classes=2)
    assert t.n_nodes == 1
    assert t.predict(np.array([[7.0]])).tolist() == [1]


def test_predict_row_order_invariant():
    x, y = blobs(n_per=30, k=3, d=3, sep=3.0, seed=2)
    t = cart_fit(x=x, y=y, n_classes=3, params=TreeParams(max_depth=4))
    perm = np.random.default_rng(0).permutation(len(y))
    assert np.array_equal(t.predict(x)[perm], t.predict(x[perm]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 3), st.integers(1, 4))
def test_root_split_matches_exhaustive_search(seed, m, d):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 6, size=(25, d)).astype(float)
    y = rng.integers(0, m, 25)
    t = cart_fit(x=x, y=y, n_classes=m, params=TreeParams(max_depth=1))
    gain, j, thr = best_root_split(x, y, m)
    if j < 0:
        assert t.n_nodes == 1
    else:
        assert (t.feature[0], t.threshold[0]) == (j, thr)
        assert t.gains[0] == pytest.approx(gain, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_unbounded_tree_fits_distinct_rows(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 3))
    y = rng.integers(0, 3, 40)
    t = cart_fit(x=x, y=y, n_classes=3)
    assert np.array_equal(t.predict(x), y)
    assert (t.counts[t.is_leaf()].sum(axis=1) > 0).all()


def test_tree_round_trip_and_dimension_check():
    x, y = blobs(n_per=20, k=2, d=3, seed=0)
    t = cart_fit(x=x, y=y, n_classes=2)
    again = DecisionTree.from_dict(t.to_dict())
    assert np.array_equal(again.predict(x), t.predict(x))
    with pytest.raises(DimensionMismatch):
        t.predict(np.zeros((1, 2)))


def test_bad_params():
    with pytest.raises(ConfigError):
        cart_fit(x=TOY_X, y=TOY_Y, params=TreeParams(min_samples_split=1))
    with pytest.raises(ConfigError):
        cart_fit(x=TOY_X, y=TOY_Y, params=TreeParams(max_features="log2"))


def test_single_tree_forest_equals_cart():
    x, y = blobs(n_per=40, k=3, d=4, sep=3.0, seed=5)
    forest = rf_fit(x=x, y=y, n_classes=3, seed=9, params=ForestParams(n_trees=1, bootstrap=False, max_features=None))
    tree = cart_fit(x=x, y=y, n_classes=3, seed=9)
    probe = np.random.default_rng(1).normal(size=(100, 4)) * 4
    assert np.array_equal(forest.predict(probe), tree.predict(probe))


def test_forest_separable_blobs():
    x, y = blobs(n_per=200, k=2, d=5, sep=6.0, seed=3)
    forest = rf_fit(x=x, y=y, n_classes=2, seed=0, params=ForestParams(n_trees=20))
    assert (forest.predict(x) == y).mean() >= 0.99


def test_forest_seeded_and_thread_independent():
    x, y = blobs(n_per=50, k=3, d=6, sep=2.0, seed=8)
    p = ForestParams(n_trees=8, max_depth=5)
    a = rf_fit(x=x, y=y, n_classes=3, seed=4, params=p)
    b = rf_fit(x=x, y=y, n_classes=3, seed=4, params=p, jobs=3)
    assert a.to_dict() == b.to_dict()
    again = RandomForest.from_dict(a.to_dict())
    assert np.array_equal(again.predict_votes(x), a.predict_votes(x))


def test_gbt_zero_learning_rate_predicts_prior():
    x, y = blobs(n_per=10, k=3, d=2, seed=0)
    y = np.concatenate([y, np.full(5, 2)])
    x = np.vstack([x, np.zeros((5, 2))])
    for params in (BoostParams(n_estimators=5, learning_rate=0.0), BoostParams(n_estimators=0)):
        m = gbt_fit(x=x, y=y, n_classes=3, params=params)
        assert (m.predict(x) == 2).all()


def test_gbt_threshold_toy():
    m = gbt_fit(x=TOY_X, y=TOY_Y, n_classes=2, params=BoostParams(n_estimators=10, max_depth=2, learning_rate=0.3))
    assert np.array_equal(m.predict(TOY_X), TOY_Y)


@pytest.mark.parametrize("seed", range(5))
def test_gbt_loss_non_increasing(seed):
    x, y = blobs(n_per=60, k=4, d=5, sep=2.0, seed=seed)
    m = gbt_fit(x=x, y=y, n_classes=4, params=BoostParams(n_estimators=30, max_depth=3))
    loss = np.array(m.train_loss)
    assert (np.diff(loss) <= 1e-8 * loss[:-1]).all()


def test_staged_decision_equals_shorter_runs():
    x, y = blobs(n_per=40, k=3, d=4, sep=2.0, seed=1)
    long = gbt_fit(x=x, y=y, n_classes=3, params=BoostParams(n_estimators=20, max_depth=3, learning_rate=0.2))
    staged = dict(long.staged_decision(x, [5, 12, 20]))
    for n in (5, 12, 20):
        short = gbt_fit(x=x, y=y, n_classes=3, params=BoostParams(n_estimators=n, max_depth=3, learning_rate=0.2))
        assert np.array_equal(staged[n], short.decision_function(x))
        assert np.array_equal(staged[n], long.decision_function(x, n))


def test_gbt_round_trip():
    x, y = blobs(n_per=20, k=3, d=3, seed=2)
    m = gbt_fit(x=x, y=y, n_classes=3, params=BoostParams(n_estimators=4, max_depth=2))
    again = GradientBoostedModel.from_dict(m.to_dict())
    assert np.array_equal(again.predict_proba(x), m.predict_proba(x))
    np.testing.assert_allclose(m.predict_proba(x).sum(axis=1), 1.0)


def test_gbt_absent_class_never_predicted():
    x, y = blobs(n_per=20, k=2, d=2, seed=0)
    m = gbt_fit(x=x, y=y, n_classes=3, params=BoostParams(n_estimators=5))
    assert m.base_scores[2] == pytest.approx(np.log(1e-12))
    assert set(m.predict(x).tolist()) <= {0, 1}
