"""k-means (k-means++ seeding, Lloyd iterations) and Gaussian mixtures fitted
by EM with spherical, diagonal, full or tied covariances.

Cluster labels from these models are the prior-knowledge columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import ConfigError, DimensionMismatch, SingularCovariance, TooFewPoints

COVARIANCE_TYPES = ("spherical", "diag", "full", "tied")
_CHUNK = 1 << 22


def _check_x(x, k):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got shape {x.shape}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    if x.shape[0] < k:
        raise TooFewPoints(f"{x.shape[0]} points for k={k}")
    if not np.isfinite(x).all():
        raise ConfigError("clustering input contains non-finite values")
    return x


def _sq_dist(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances (n, k), computed by direct differences in
    row chunks so ties are exact."""
    n, d = x.shape
    k = centroids.shape[0]
    out = np.empty((n, k))
    step = max(1, _CHUNK // max(1, k * d))
    for s in range(0, n, step):
        diff = x[s : s + step, None, :] - centroids[None, :, :]
        out[s : s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


# --------------------------------------------------------------------------
# k-means


@dataclass
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    inertia_trace: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_features(self) -> int:
        return self.centroids.shape[1]

    def assign(self, x) -> np.ndarray:
        return kmeans_assign(self, x)

    def to_dict(self) -> dict:
        return {
            "type": "kmeans",
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "inertia": self.inertia,
            "iterations_run": self.iterations_run,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KMeansModel":
        c = np.asarray(d["centroids"], dtype=np.float64).reshape(int(d["k"]), -1)
        return cls(c, float(d["inertia"]), int(d["iterations_run"]))


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding, one candidate per step."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dist(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dist(x, centers[j : j + 1])[:, 0])
    return centers


def _repair_empty(x, labels, d2, centroids, k):
    """Give each empty cluster the point farthest from its centroid, taken
    from a cluster that keeps at least one member."""
    sizes = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(sizes == 0):
        order = np.argsort(-d2, kind="stable")
        for p in order:
            if sizes[labels[p]] > 1:
                sizes[labels[p]] -= 1
                labels[p] = j
                sizes[j] = 1
                d2[p] = 0.0
                centroids[j] = x[p]
                break
    return labels


def kmeans_fit(x, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-4) -> KMeansModel:
    """Lloyd iterations from k-means++ seeds.

    Stops when the summed squared centroid shift falls below ``tol`` or
    after ``max_iter`` updates. ``inertia_trace[i]`` is the inertia of the
    i-th assignment step.
    """
    x = _check_x(x, k)
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(x, k, rng)
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dist(x, centroids)
        labels = np.argmin(d2, axis=1)
        dmin = d2[np.arange(x.shape[0]), labels]
        trace.append(float(dmin.sum()))
        new = centroids.copy()
        labels = _repair_empty(x, labels, dmin, new, k)
        sizes = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        filled = sizes > 0
        new[filled] = sums[filled] / sizes[filled, None]
        shift = float(((new - centroids) ** 2).sum())
        centroids = new
        if shift < tol:
            break
    d2 = _sq_dist(x, centroids)
    inertia = float(d2.min(axis=1).sum())
    trace.append(inertia)
    return KMeansModel(centroids, inertia, it, trace)


def kmeans_assign(model: KMeansModel, x) -> np.ndarray:
    """Nearest centroid; equidistant points go to the lower index."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DimensionMismatch(f"model has {model.n_features} features, input {x.shape}")
    return np.argmin(_sq_dist(x, model.centroids), axis=1)


# --------------------------------------------------------------------------
# Gaussian mixture


@dataclass
class GmmModel:
    """``covariances`` shape by type: spherical (k,), diag (k, d),
    full (k, d, d), tied (d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_type: str
    final_loglik: float
    loglik_trace: list[float] = field(default_factory=list)
    iterations_run: int = 0

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def assign(self, x) -> np.ndarray:
        return gmm_assign(self, x)

    def to_dict(self) -> dict:
        return {
            "type": "gmm",
            "k": self.k,
            "covariance_type": self.covariance_type,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "final_loglik": self.final_loglik,
            "iterations_run": self.iterations_run,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        return cls(
            np.asarray(d["weights"], dtype=np.float64),
            np.asarray(d["means"], dtype=np.float64).reshape(int(d["k"]), -1),
            np.asarray(d["covariances"], dtype=np.float64),
            d["covariance_type"],
            float(d["final_loglik"]),
            iterations_run=int(d.get("iterations_run", 0)),
        )


def _estimate_covariances(x, resp, nk, means, covariance_type, reg):
    n, d = x.shape
    if covariance_type == "full":
        cov = np.empty((means.shape[0], d, d))
        for j in range(means.shape[0]):
            diff = x - means[j]
            cov[j] = (resp[:, j] * diff.T) @ diff / nk[j]
            cov[j].flat[:: d + 1] += reg
        return cov
    if covariance_type == "tied":
        cov = np.zeros((d, d))
        for j in range(means.shape[0]):
            diff = x - means[j]
            cov += (resp[:, j] * diff.T) @ diff
        cov /= nk.sum()
        cov = 0.5 * (cov + cov.T)
        cov.flat[:: d + 1] += reg
        return cov
    diag = np.empty((means.shape[0], d))
    for j in range(means.shape[0]):
        diag[j] = resp[:, j] @ ((x - means[j]) ** 2) / nk[j]
    diag += reg
    if covariance_type == "diag":
        return diag
    return diag.mean(axis=1)


def _m_step(x, resp, covariance_type, reg):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = (resp.T @ x) / nk[:, None]
    cov = _estimate_covariances(x, resp, nk, means, covariance_type, reg)
    weights = nk / nk.sum()
    return weights, means, cov


def _cholesky(a):
    try:
        return linalg.cholesky(a, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovariance("covariance is not positive definite; increase reg") from exc


def _log_gaussian(x, means, cov, covariance_type) -> np.ndarray:
    """log N(x | mean_j, cov_j), shape (n, k)."""
    n, d = x.shape
    k = means.shape[0]
    out = np.empty((n, k))
    if covariance_type in ("full", "tied"):
        shared = _cholesky(cov) if covariance_type == "tied" else None
        for j in range(k):
            chol = shared if shared is not None else _cholesky(cov[j])
            z = linalg.solve_triangular(chol, (x - means[j]).T, lower=True)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            out[:, j] = -0.5 * (d * np.log(2 * np.pi) + logdet + (z * z).sum(axis=0))
        return out
    if np.any(cov <= 0):
        raise SingularCovariance("nonpositive variance; increase reg")
    for j in range(k):
        var = cov[j] if covariance_type == "diag" else np.full(d, cov[j])
        diff = x - means[j]
        out[:, j] = -0.5 * (d * np.log(2 * np.pi) + np.log(var).sum() + (diff * diff / var).sum(axis=1))
    return out


def _weighted_log_prob(model_params, x):
    weights, means, cov, ctype = model_params
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return _log_gaussian(x, means, cov, ctype) + logw


def gmm_fit(
    x,
    k: int,
    covariance_type: str = "full",
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-4,
    reg: float = 1e-6,
) -> GmmModel:
    """EM for a k-component Gaussian mixture.

    Responsibilities start as the hard partition of a k-means run with the
    same seed. ``reg`` is added to every variance / covariance diagonal in
    each M-step; ``reg=0`` disables it and may raise
    :class:`SingularCovariance`. EM stops when the mean log-likelihood
    changes by less than ``tol``.
    """
    if covariance_type not in COVARIANCE_TYPES:
        raise ConfigError(f"covariance_type must be one of {COVARIANCE_TYPES}")
    if reg < 0:
        raise ConfigError("reg must be >= 0")
    x = _check_x(x, k)
    n = x.shape[0]
    km = kmeans_fit(x, k, seed=seed, max_iter=max_iter, tol=tol)
    resp = np.zeros((n, k))
    resp[np.arange(n), kmeans_assign(km, x)] = 1.0
    params = (*_m_step(x, resp, covariance_type, reg), covariance_type)

    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        wlp = _weighted_log_prob(params, x)
        norm = logsumexp(wlp, axis=1)
        ll = float(norm.mean())
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            break
        resp = np.exp(wlp - norm[:, None])
        params = (*_m_step(x, resp, covariance_type, reg), covariance_type)
    weights, means, cov, _ = params
    return GmmModel(weights, means, cov, covariance_type, trace[-1], trace, it)


def gmm_log_responsibilities(model: GmmModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DimensionMismatch(f"model has {model.n_features} features, input {x.shape}")
    wlp = _weighted_log_prob((model.weights, model.means, model.covariances, model.covariance_type), x)
    return wlp - logsumexp(wlp, axis=1, keepdims=True)


def gmm_predict_proba(model: GmmModel, x) -> np.ndarray:
    return np.exp(gmm_log_responsibilities(model, x))


def gmm_assign(model: GmmModel, x) -> np.ndarray:
    """Highest posterior component, computed in log space; ties to the lower index."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DimensionMismatch(f"model has {model.n_features} features, input {x.shape}")
    wlp = _weighted_log_prob((model.weights, model.means, model.covariances, model.covariance_type), x)
    return np.argmax(wlp, axis=1)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterSpec:
    method: str = "gmm"
    covariance_type: str = "full"
    max_iter: int = 300
    tol: float = 1e-4
    reg: float = 1e-6

    def __post_init__(self):
        if self.method not in ("kmeans", "gmm"):
            raise ConfigError(f"unknown clustering method {self.method!r}")
        if self.covariance_type not in COVARIANCE_TYPES:
            raise ConfigError(f"covariance_type must be one of {COVARIANCE_TYPES}")

    def fit(self, x, k: int, seed: int):
        if self.method == "kmeans":
            return kmeans_fit(x, k, seed=seed, max_iter=self.max_iter, tol=self.tol)
        return gmm_fit(x, k, self.covariance_type, seed=seed, max_iter=self.max_iter, tol=self.tol, reg=self.reg)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "covariance_type": self.covariance_type,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "reg": self.reg,
        }


def cluster_from_dict(d: dict):
    if d["type"] == "kmeans":
        return KMeansModel.from_dict(d)
    if d["type"] == "gmm":
        return GmmModel.from_dict(d)
    raise ConfigError(f"unknown cluster model type {d['type']!r}")
