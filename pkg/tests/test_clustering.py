import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from conftest import blobs
from suites import COVARIANCE_TYPES, mixture_2d, non_decreasing, non_increasing
from pki_apt.clustering import (
    ClusterSpec,
    GmmModel,
    KMeansModel,
    cluster_from_dict,
    gmm_assign,
    gmm_fit,
    gmm_predict_proba,
    kmeans_assign,
    kmeans_fit,
)
from pki_apt.errors import ConfigError, DimensionMismatch, TooFewPoints

POINTS = np.array([[0.0], [1.0], [10.0], [11.0]])


def test_kmeans_two_pairs():
    m = kmeans_fit(POINTS, 2, seed=0)
    assert sorted(m.centroids.ravel().tolist()) == [0.5, 10.5]
    assert m.inertia == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(10))
def test_kmeans_finds_global_optimum_on_pairs(seed):
    # exhaustive: every 2-partition of 4 points, best inertia is 1.0
    assert kmeans_fit(POINTS, 2, seed=seed).inertia == pytest.approx(1.0)


def test_kmeans_single_cluster_is_mean():
    x = np.random.default_rng(1).normal(size=(50, 3))
    m = kmeans_fit(x, 1)
    np.testing.assert_allclose(m.centroids[0], x.mean(axis=0))
    assert m.inertia == pytest.approx(x.var(axis=0).sum() * 50)


def test_kmeans_deterministic():
    x = mixture_2d(7)
    a, b = kmeans_fit(x, 4, seed=3), kmeans_fit(x, 4, seed=3)
    assert a.centroids.tobytes() == b.centroids.tobytes()
    assert a.inertia_trace == b.inertia_trace


def test_kmeans_assign_rules():
    m = KMeansModel(np.array([[0.0], [2.0]]), 0.0, 0, [])
    assert kmeans_assign(m, np.array([[2.0], [1.0], [0.0]])).tolist() == [1, 0, 0]
    with pytest.raises(DimensionMismatch):
        kmeans_assign(m, np.zeros((1, 2)))


def test_kmeans_too_few_points():
    with pytest.raises(TooFewPoints):
        kmeans_fit(POINTS, 5)


def test_kmeans_duplicate_points_no_empty_cluster():
    x = np.array([[0.0]] * 5 + [[1.0]] * 5)
    m = kmeans_fit(x, 3, seed=0)
    assert np.isfinite(m.centroids).all()


@pytest.mark.parametrize("seed", range(20))
def test_lloyd_monotone(seed):
    assert non_increasing(kmeans_fit(mixture_2d(seed), 3, seed=seed).inertia_trace)


def test_gmm_single_component_full():
    x = np.random.default_rng(2).normal(size=(80, 2)) @ np.array([[2.0, 0.3], [0.0, 0.5]])
    m = gmm_fit(x, 1, "full", reg=1e-6)
    np.testing.assert_allclose(m.means[0], x.mean(axis=0), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(m.covariances[0], np.cov(x.T, bias=True) + 1e-6 * np.eye(2), rtol=1e-9)


def test_gmm_separated_blobs_match_kmeans():
    x, y = blobs(n_per=100, k=2, d=2, sep=20.0, seed=0)
    x = x - 10.0
    m = gmm_fit(x, 2, "full", seed=0)
    proba = gmm_predict_proba(m, x)
    labels = gmm_assign(m, x)
    assert (proba.max(axis=1) >= 0.999).all()
    assert np.array_equal(labels, kmeans_fit(x, 2, seed=0).assign(x))
    # each blob is one component
    assert len(set(labels[y == 0])) == 1 and len(set(labels[y == 1])) == 1


def test_gmm_assign_ties_and_dominant_component():
    m = GmmModel(np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.array([1.0, 1.0]), "spherical", 0.0)
    assert gmm_assign(m, np.array([[0.0]])).tolist() == [0]
    heavy = GmmModel(np.array([0.1, 0.9]), np.array([[0.0], [0.5]]), np.array([1.0, 1.0]), "spherical", 0.0)
    assert gmm_assign(heavy, np.array([[0.5]])).tolist() == [1]


def _dense_cov(m: GmmModel, j: int) -> np.ndarray:
    d = m.n_features
    c = m.covariances
    return {
        "spherical": lambda: c[j] * np.eye(d),
        "diag": lambda: np.diag(c[j]),
        "full": lambda: c[j],
        "tied": lambda: c,
    }[m.covariance_type]()


@pytest.mark.parametrize("cov", COVARIANCE_TYPES)
def test_gmm_loglik_matches_scipy_density(cov):
    x = mixture_2d(11)
    m = gmm_fit(x, 3, cov, seed=2, max_iter=500, tol=1e-10)
    assert m.iterations_run < 500
    dens = np.column_stack([
        np.log(m.weights[j]) + multivariate_normal(m.means[j], _dense_cov(m, j)).logpdf(x) for j in range(3)
    ])
    assert m.final_loglik == pytest.approx(float(logsumexp(dens, axis=1).mean()), rel=1e-10)
    np.testing.assert_allclose(gmm_predict_proba(m, x), np.exp(dens - logsumexp(dens, axis=1, keepdims=True)), atol=1e-10)


@pytest.mark.parametrize("cov", COVARIANCE_TYPES)
@pytest.mark.parametrize("seed", range(5))
def test_em_monotone(cov, seed):
    m = gmm_fit(mixture_2d(seed), 3, cov, seed=seed)
    assert non_decreasing(m.loglik_trace)


def test_gmm_round_trip_and_spec():
    x = mixture_2d(0)
    m = ClusterSpec("gmm", "diag").fit(x, 2, seed=1)
    again = cluster_from_dict(m.to_dict())
    assert np.array_equal(again.assign(x), m.assign(x))
    k = ClusterSpec("kmeans").fit(x, 2, seed=1)
    assert np.array_equal(cluster_from_dict(k.to_dict()).assign(x), k.assign(x))


def test_bad_specs():
    with pytest.raises(ConfigError):
        ClusterSpec("dbscan")
    with pytest.raises(ConfigError):
        gmm_fit(mixture_2d(0), 2, "banana")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5))
def test_kmeans_labels_in_range(seed, k):
    x = np.random.default_rng(seed).normal(size=(30, 3))
    m = kmeans_fit(x, k, seed=seed)
    lab = m.assign(x)
    assert lab.min() >= 0 and lab.max() < k
    assert np.isfinite(m.centroids).all()


def test_ridge_is_the_only_source_of_em_dips():
    # seed 56 of the suite: the per-step ridge makes one EM step lose ~3e-8
    x = mixture_2d(56)
    ridged = gmm_fit(x, 3, "full", seed=56, reg=1e-6).loglik_trace
    plain = gmm_fit(x, 3, "full", seed=56, reg=0.0).loglik_trace
    assert np.diff(ridged).min() < 0
    assert non_decreasing(plain, rel=0.0)
