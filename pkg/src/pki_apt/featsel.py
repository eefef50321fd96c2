"""Filter feature scoring (chi2, ANOVA F, mutual information) and the
feature-count sweep that picks k by validation macro-F1."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .dataset import Dataset
from .errors import KOutOfRange, NegativeFeature, SingleClass, SweepError
from .metrics import macro_f1_score

log = logging.getLogger(__name__)

Method = Literal["chi2", "anova_f", "mutual_info"]
METHODS: tuple[str, ...] = ("chi2", "anova_f", "mutual_info")
_ALIASES = {"anova": "anova_f", "mi": "mutual_info"}


def canonical_method(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in METHODS:
        raise ValueError(f"unknown feature scoring method {name!r}")
    return name


@dataclass(frozen=True)
class FeatureScores:
    method: str
    scores: np.ndarray


def _xy(ds):
    if isinstance(ds, Dataset):
        return ds.x, ds.y, ds.n_classes
    x, y = ds
    y = np.asarray(y, dtype=np.int64)
    return np.asarray(x, dtype=np.float64), y, int(y.max()) + 1


def shift_nonnegative(x: np.ndarray, mins: np.ndarray | None = None) -> np.ndarray:
    """Shift columns with negative entries so their minimum is 0."""
    if mins is None:
        mins = x.min(axis=0)
    return x - np.minimum(mins, 0.0)


def chi2_scores(ds) -> FeatureScores:
    """Observed-vs-expected class sums of each (nonnegative) feature.

    ``O[c, j]`` is the sum of feature j over class c and
    ``E[c, j] = total_j * n_c / n``; the score is ``sum_c (O - E)^2 / E``.
    """
    x, y, m = _xy(ds)
    neg = np.flatnonzero((x < 0).any(axis=0))
    if neg.size:
        raise NegativeFeature(int(neg[0]))
    onehot = np.zeros((x.shape[0], m))
    onehot[np.arange(x.shape[0]), y] = 1.0
    observed = onehot.T @ x
    freq = onehot.mean(axis=0)
    total = x.sum(axis=0)
    expected = np.outer(freq, total)
    terms = np.zeros_like(observed)
    np.divide((observed - expected) ** 2, expected, out=terms, where=expected > 0)
    scores = terms.sum(axis=0)
    zero = np.flatnonzero(total == 0)
    if zero.size:
        warnings.warn(f"features {zero.tolist()} sum to zero; chi2 score set to 0", RuntimeWarning, stacklevel=2)
        scores[zero] = 0.0
    return FeatureScores("chi2", scores)


def anova_f_scores(ds) -> FeatureScores:
    """One-way ANOVA F statistic per feature.

    Features with zero within-class spread but nonzero between-class spread
    would score +inf; they get 10x the largest finite score instead (at
    least 10).
    """
    x, y, _ = _xy(ds)
    classes = np.unique(y)
    m = classes.size
    n = x.shape[0]
    if m < 2:
        raise SingleClass("ANOVA F needs at least two populated classes")
    grand = x.mean(axis=0)
    ssb = np.zeros(x.shape[1])
    ssw = np.zeros(x.shape[1])
    for c in classes:
        xc = x[y == c]
        mc = xc.mean(axis=0)
        ssb += xc.shape[0] * (mc - grand) ** 2
        ssw += ((xc - mc) ** 2).sum(axis=0)
    sst = ((x - grand) ** 2).sum(axis=0)
    ssw = np.where(ssw <= 1e-12 * sst, 0.0, ssw)

    scores = np.zeros(x.shape[1])
    regular = ssw > 0
    df_w = n - m
    scores[regular] = (ssb[regular] / (m - 1)) / (ssw[regular] / df_w)
    infinite = ~regular & (ssb > 0)
    if infinite.any():
        finite_max = scores[regular].max() if regular.any() else 0.0
        fill = max(finite_max, 1.0) * 10.0
        log.info("ANOVA F: %d features with zero within-class variance set to %g", infinite.sum(), fill)
        scores[infinite] = fill
    return FeatureScores("anova_f", scores)


def mutual_info_scores(ds, bins: int = 10) -> FeatureScores:
    """Histogram estimate of I(feature; label) in nats, equal-width bins."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x, y, m = _xy(ds)
    n = x.shape[0]
    py = np.bincount(y, minlength=m) / n
    scores = np.zeros(x.shape[1])
    for j in range(x.shape[1]):
        b = _bin_column(x[:, j], bins)
        joint = np.bincount(b * m + y, minlength=bins * m).reshape(bins, m) / n
        pb = joint.sum(axis=1)
        outer = np.outer(pb, py)
        nz = joint > 0
        scores[j] = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return FeatureScores("mutual_info", np.maximum(scores, 0.0))


def _bin_column(col: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi <= lo:
        return np.zeros(col.size, dtype=np.int64)
    b = np.floor((col - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(b, 0, bins - 1)


def feature_scores(ds, method: str, bins: int = 10) -> FeatureScores:
    method = canonical_method(method)
    if method == "chi2":
        return chi2_scores(ds)
    if method == "anova_f":
        return anova_f_scores(ds)
    return mutual_info_scores(ds, bins)


def select_top_k(scores, k: int) -> np.ndarray:
    """Indices of the k best scores; ties go to the lower feature index."""
    s = scores.scores if isinstance(scores, FeatureScores) else np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= s.size:
        raise KOutOfRange(f"k={k} outside [1, {s.size}]")
    return np.argsort(-s, kind="stable")[:k]


@dataclass
class SelectionResult:
    method: str
    k: int
    indices: np.ndarray
    val_macro_f1: float
    trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def columns(self) -> np.ndarray:
        """Selected columns in ascending order, the layout models are fed."""
        return np.sort(self.indices)

    def trace_csv(self) -> str:
        return "k,macro_f1\n" + "".join(f"{k},{f:.6f}\n" for k, f in self.trace)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "indices": [int(i) for i in self.indices],
            "val_macro_f1": None if np.isnan(self.val_macro_f1) else float(self.val_macro_f1),
            "trace": [[int(k), float(f)] for k, f in self.trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        return cls(
            d["method"],
            int(d["k"]),
            np.asarray(d["indices"], dtype=np.int64),
            float("nan") if d["val_macro_f1"] is None else float(d["val_macro_f1"]),
            [(int(k), float(f)) for k, f in d.get("trace", [])],
        )


def full_selection(d: int) -> SelectionResult:
    return SelectionResult("none", d, np.arange(d), float("nan"))


def score_for_sweep(train: Dataset, method: str, bins: int = 10) -> FeatureScores:
    if canonical_method(method) == "chi2":
        x = shift_nonnegative(train.x)
        return chi2_scores((x, train.y))
    return feature_scores(train, method, bins)


def _eval_k(args):
    from .supervised import fit_supervised

    k, order, train, val, spec, seed = args
    cols = np.sort(order[:k])
    try:
        model = fit_supervised(spec, train.x[:, cols], train.y, train.n_classes, seed)
        pred = model.predict(val.x[:, cols])
    except Exception as exc:
        raise SweepError("feature-count sweep", k, exc) from exc
    return k, macro_f1_score(val.y, pred, train.n_classes)


def sweep_feature_count(
    ds_train: Dataset,
    ds_val: Dataset,
    method: str,
    supervised_spec,
    base_seed: int = 0,
    ks=None,
    bins: int = 10,
    jobs: int = 1,
) -> SelectionResult:
    """Train one model per candidate k on the top-k features and keep the
    k with the best validation macro-F1 (smallest k on ties).

    The model for k uses seed ``base_seed + k``.
    """
    from .parallel import parallel_map

    method = canonical_method(method)
    scores = score_for_sweep(ds_train, method, bins)
    d = ds_train.d
    ks = list(range(1, d + 1)) if ks is None else sorted(set(int(k) for k in ks))
    for k in ks:
        if not 1 <= k <= d:
            raise KOutOfRange(f"k={k} outside [1, {d}]")
    order = select_top_k(scores, d)
    tasks = [(k, order, ds_train, ds_val, supervised_spec, base_seed + k) for k in ks]
    trace = parallel_map(_eval_k, tasks, jobs)
    best_k, best_f = trace[0]
    for k, f in trace[1:]:
        if f > best_f:
            best_k, best_f = k, f
    return SelectionResult(method, best_k, order[:best_k].copy(), best_f, list(trace))
