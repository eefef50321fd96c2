"""CART classification trees, random forests and multiclass gradient boosting.

Split search is exact greedy over presorted columns. Candidate thresholds
are midpoints between consecutive distinct values; ties between equally
good splits go to the lowest feature index, then the lowest threshold.
The growing loops are compiled with numba and release the GIL.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, DimensionMismatch, EmptyDataset

# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _next_u64(state):
    # splitmix64
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _shuffle(perm, state):
    for i in range(perm.size - 1, 0, -1):
        j = np.int64(_next_u64(state) % np.uint64(i + 1))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp


@njit(cache=True, nogil=True)
def _partition(order, vals, f, thr, start, end, goes_left, buf, vbuf):
    # stable split of every column's segment into (<= thr, > thr)
    d = order.shape[0]
    n_left = 0
    for i in range(start, end):
        left = vals[f, i] <= thr
        goes_left[order[f, i]] = left
        if left:
            n_left += 1
    for g in range(d):
        lo = 0
        hi = n_left
        for i in range(start, end):
            r = order[g, i]
            if goes_left[r]:
                buf[lo] = r
                vbuf[lo] = vals[g, i]
                lo += 1
            else:
                buf[hi] = r
                vbuf[hi] = vals[g, i]
                hi += 1
        for i in range(end - start):
            order[g, start + i] = buf[i]
            vals[g, start + i] = vbuf[i]
    return n_left


@njit(cache=True, nogil=True)
def _grow_gini(vals, y, n_classes, order, max_depth, min_samples_split, min_gain, max_features, state):
    d, n = vals.shape
    cap = 2 * n + 1
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    counts = np.zeros((cap, n_classes), np.int64)
    gains = np.zeros(cap)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    n_nodes = 1

    goes_left = np.zeros(n, np.bool_)
    buf = np.empty(n, np.int64)
    vbuf = np.empty(n)
    perm = np.arange(d)
    cl = np.zeros(n_classes, np.int64)
    cr = np.zeros(n_classes, np.int64)
    sample = max_features < d

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        nn = end - start
        for i in range(start, end):
            counts[node, y[order[0, i]]] += 1
        sumsq = 0.0
        for c in range(n_classes):
            sumsq += counts[node, c] * counts[node, c]
        impurity = 1.0 - sumsq / (nn * nn)
        if (max_depth >= 0 and depth >= max_depth) or nn < min_samples_split or impurity <= 0.0:
            continue

        if sample:
            for i in range(d):
                perm[i] = i
            _shuffle(perm, state)
        best_score = np.inf
        best_f = -1
        best_t = 0.0
        visited = 0
        for fi in range(d):
            if sample and visited >= max_features:
                break
            f = perm[fi]
            if vals[f, start] == vals[f, end - 1]:
                continue
            visited += 1
            for c in range(n_classes):
                cl[c] = 0
                cr[c] = counts[node, c]
            sl = 0.0
            sr = sumsq
            for i in range(start, end - 1):
                r = order[f, i]
                c = y[r]
                sl += 2 * cl[c] + 1
                cl[c] += 1
                sr -= 2 * cr[c] - 1
                cr[c] -= 1
                v = vals[f, i]
                vn = vals[f, i + 1]
                if v < vn:
                    nl = i - start + 1
                    nr = nn - nl
                    score = (nl - sl / nl) + (nr - sr / nr)
                    t = 0.5 * (v + vn)
                    if t >= vn:
                        t = v
                    if score < best_score or (
                        score == best_score and (f < best_f or (f == best_f and t < best_t))
                    ):
                        best_score = score
                        best_f = f
                        best_t = t
        if best_f < 0:
            continue
        gain = impurity - best_score / nn
        if gain <= min_gain or gain <= 1e-12:
            continue

        n_left = _partition(order, vals, best_f, best_t, start, end, goes_left, buf, vbuf)
        feat[node] = best_f
        thr[node] = best_t
        gains[node] = gain
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_node[sp] = rc
        st_start[sp] = start + n_left
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lc
        st_start[sp] = start
        st_end[sp] = start + n_left
        st_depth[sp] = depth + 1
        sp += 1

    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], counts[:n_nodes], gains[:n_nodes]


@njit(cache=True, nogil=True)
def _grow_newton(vals, g, h, order, max_depth, lam, min_child_weight, min_gain):
    d, n = vals.shape
    cap = 2 * n + 1
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    gains = np.zeros(cap)
    leaf_of = np.empty(n, np.int64)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    goes_left = np.zeros(n, np.bool_)
    buf = np.empty(n, np.int64)
    vbuf = np.empty(n)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        G = 0.0
        H = 0.0
        for i in range(start, end):
            r = order[0, i]
            G += g[r]
            H += h[r]
        value[node] = -G / (H + lam)
        parent = G * G / (H + lam)

        best_score = -np.inf
        best_f = -1
        best_t = 0.0
        if not (max_depth >= 0 and depth >= max_depth) and end - start >= 2:
            for f in range(d):
                if vals[f, start] == vals[f, end - 1]:
                    continue
                gl = 0.0
                hl = 0.0
                for i in range(start, end - 1):
                    r = order[f, i]
                    gl += g[r]
                    hl += h[r]
                    v = vals[f, i]
                    vn = vals[f, i + 1]
                    if v < vn:
                        hr = H - hl
                        if hl < min_child_weight or hr < min_child_weight:
                            continue
                        gr = G - gl
                        score = gl * gl / (hl + lam) + gr * gr / (hr + lam)
                        t = 0.5 * (v + vn)
                        if t >= vn:
                            t = v
                        if score > best_score or (
                            score == best_score and (f < best_f or (f == best_f and t < best_t))
                        ):
                            best_score = score
                            best_f = f
                            best_t = t
        gain = 0.5 * (best_score - parent)
        if best_f < 0 or gain <= min_gain or gain <= 1e-12:
            for i in range(start, end):
                leaf_of[order[0, i]] = node
            continue

        n_left = _partition(order, vals, best_f, best_t, start, end, goes_left, buf, vbuf)
        feat[node] = best_f
        thr[node] = best_t
        gains[node] = gain
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_node[sp] = rc
        st_start[sp] = start + n_left
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lc
        st_start[sp] = start
        st_end[sp] = start + n_left
        st_depth[sp] = depth + 1
        sp += 1

    return (
        feat[:n_nodes],
        thr[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        gains[:n_nodes],
        leaf_of,
    )


@njit(cache=True, nogil=True)
def _apply(x, feat, thr, left, right):
    n = x.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if x[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def _presort(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature row order (d, n) and the matching sorted values."""
    order = np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T).astype(np.int64)
    vals = np.ascontiguousarray(np.take_along_axis(x.T, order, axis=1))
    return order, vals


def _rng_state(rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.integers(1, 2**63 - 1)], dtype=np.uint64)


def _check_xy(x, y):
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"x {x.shape} and y {y.shape} do not line up")
    if x.shape[0] == 0:
        raise EmptyDataset("cannot fit on zero rows")
    return x, y


def _unpack(ds, x=None, y=None, n_classes=None):
    """Accept a Dataset or explicit ``x, y, n_classes``."""
    if ds is not None:
        return ds.x, ds.y, ds.n_classes
    return x, y, n_classes


# --------------------------------------------------------------------------
# single trees


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_impurity_decrease: float = 0.0
    # None = all features; "sqrt" = ceil(sqrt(d)); int = that many
    max_features: int | str | None = None

    def resolve_max_features(self, d: int) -> int:
        mf = self.max_features
        if mf is None:
            return d
        if mf == "sqrt":
            return max(1, math.ceil(math.sqrt(d)))
        if isinstance(mf, int) and mf >= 1:
            return min(mf, d)
        raise ConfigError(f"bad max_features {mf!r}")


@dataclass
class DecisionTree:
    """Nodes in array form; ``feature == -1`` marks a leaf.

    ``counts[i]`` holds the class counts of the training rows reaching
    node i, ``gains[i]`` the Gini decrease of an internal node's split.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    gains: np.ndarray
    n_features: int
    params: TreeParams = TreeParams()

    @property
    def n_classes(self) -> int:
        return self.counts.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DimensionMismatch(f"tree expects {self.n_features} columns, got {x.shape}")
        return _apply(x, self.feature, self.threshold, self.left, self.right)

    def predict_counts(self, x) -> np.ndarray:
        return self.counts[self.apply(x)]

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_counts(x), axis=1)

    def to_dict(self) -> dict:
        return {
            "type": "decision_tree",
            "n_features": self.n_features,
            "params": asdict(self.params),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
            "gains": self.gains.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["counts"], dtype=np.int64).reshape(len(d["feature"]), -1),
            np.asarray(d["gains"], dtype=np.float64),
            int(d["n_features"]),
            TreeParams(**d["params"]),
        )


def _fit_tree(x, y, n_classes, params: TreeParams, rng: np.random.Generator) -> DecisionTree:
    if params.min_samples_split < 2:
        raise ConfigError("min_samples_split must be >= 2")
    d = x.shape[1]
    state = _rng_state(rng)
    order, vals = _presort(x)
    out = _grow_gini(
        vals,
        y,
        n_classes,
        order,
        -1 if params.max_depth is None else int(params.max_depth),
        int(params.min_samples_split),
        float(params.min_impurity_decrease),
        params.resolve_max_features(d),
        state,
    )
    return DecisionTree(*out, n_features=d, params=params)


def cart_fit(ds=None, params: TreeParams = TreeParams(), seed: int = 0, *, x=None, y=None, n_classes=None) -> DecisionTree:
    """Grow a Gini CART tree on a Dataset (or on ``x=, y=, n_classes=``)."""
    x, y, m = _unpack(ds, x, y, n_classes)
    x, y = _check_xy(x, y)
    m = int(m) if m is not None else int(y.max()) + 1
    return _fit_tree(x, y, m, params, np.random.default_rng(seed))


def tree_predict(tree: DecisionTree, x) -> tuple[np.ndarray, np.ndarray]:
    """Labels (majority, ties to the lower class) and leaf class counts."""
    counts = tree.predict_counts(x)
    return np.argmax(counts, axis=1), counts


# --------------------------------------------------------------------------
# random forest


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    min_impurity_decrease: float = 0.0
    max_features: int | str | None = "sqrt"
    bootstrap: bool = True

    def tree_params(self) -> TreeParams:
        return TreeParams(self.max_depth, self.min_samples_split, self.min_impurity_decrease, self.max_features)


@dataclass
class RandomForest:
    trees: list[DecisionTree]
    params: ForestParams
    seed: int
    n_classes: int

    def predict_votes(self, x) -> np.ndarray:
        votes = np.zeros((np.asarray(x).shape[0], self.n_classes), dtype=np.int64)
        rows = np.arange(votes.shape[0])
        for t in self.trees:
            np.add.at(votes, (rows, t.predict(x)), 1)
        return votes

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_votes(x), axis=1)

    def to_dict(self) -> dict:
        return {
            "type": "random_forest",
            "params": asdict(self.params),
            "seed": self.seed,
            "n_classes": self.n_classes,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        return cls(
            [DecisionTree.from_dict(t) for t in d["trees"]],
            ForestParams(**d["params"]),
            int(d["seed"]),
            int(d["n_classes"]),
        )


def _forest_member(args):
    x, y, m, params, seed = args
    rng = np.random.default_rng(seed)
    if params.bootstrap:
        rows = rng.integers(0, x.shape[0], x.shape[0])
        xb, yb = np.ascontiguousarray(x[rows]), y[rows]
    else:
        xb, yb = x, y
    return _fit_tree(xb, yb, m, params.tree_params(), rng)


def rf_fit(
    ds=None, params: ForestParams = ForestParams(), seed: int = 0, jobs: int = 1, *, x=None, y=None, n_classes=None
) -> RandomForest:
    """Tree i sees a bootstrap sample drawn with seed ``seed + i``."""
    if params.n_trees < 1:
        raise ConfigError("n_trees must be >= 1")
    x, y, m = _unpack(ds, x, y, n_classes)
    x, y = _check_xy(x, y)
    m = int(m) if m is not None else int(y.max()) + 1
    tasks = [(x, y, m, params, seed + i) for i in range(params.n_trees)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trees = list(pool.map(_forest_member, tasks))
    else:
        trees = [_forest_member(t) for t in tasks]
    return RandomForest(trees, params, seed, m)


def rf_predict(model: RandomForest, x) -> np.ndarray:
    return model.predict(x)


# --------------------------------------------------------------------------
# gradient boosting


@dataclass(frozen=True)
class BoostParams:
    n_estimators: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    l2_lambda: float = 1.0
    min_child_weight: float = 0.0
    min_split_gain: float = 0.0


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gains: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[_apply(x, self.feature, self.threshold, self.left, self.right)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "gains")}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
            np.asarray(d["gains"], dtype=np.float64),
        )


def _softmax(f: np.ndarray) -> np.ndarray:
    z = f - f.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_loss(f: np.ndarray, y: np.ndarray) -> float:
    z = f - f.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(y.size), y]))


@dataclass
class GradientBoostedModel:
    """Class probabilities are ``softmax(base_scores + lr * sum of round outputs)``."""

    base_scores: np.ndarray
    rounds: list[list[RegressionTree]]
    params: BoostParams
    n_features: int
    train_loss: list[float]

    @property
    def n_classes(self) -> int:
        return self.base_scores.size

    @property
    def learning_rate(self) -> float:
        return self.params.learning_rate

    def _check(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} columns, got {x.shape}")
        return x

    def decision_function(self, x, n_rounds: int | None = None) -> np.ndarray:
        x = self._check(x)
        f = np.tile(self.base_scores, (x.shape[0], 1))
        for trees in self.rounds[:n_rounds]:
            for c, t in enumerate(trees):
                f[:, c] += self.params.learning_rate * t.predict(x)
        return f

    def staged_decision(self, x, stages):
        """Yield ``(n_rounds, scores)`` for each requested round count, ascending."""
        x = self._check(x)
        f = np.tile(self.base_scores, (x.shape[0], 1))
        done = 0
        for s in sorted(stages):
            for trees in self.rounds[done:s]:
                for c, t in enumerate(trees):
                    f[:, c] += self.params.learning_rate * t.predict(x)
            done = max(done, min(s, len(self.rounds)))
            yield s, f.copy()

    def predict_proba(self, x) -> np.ndarray:
        return _softmax(self.decision_function(x))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.decision_function(x), axis=1)

    def to_dict(self) -> dict:
        return {
            "type": "gradient_boosting",
            "params": asdict(self.params),
            "n_features": self.n_features,
            "base_scores": self.base_scores.tolist(),
            "train_loss": list(self.train_loss),
            "rounds": [[t.to_dict() for t in trees] for trees in self.rounds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GradientBoostedModel":
        return cls(
            np.asarray(d["base_scores"], dtype=np.float64),
            [[RegressionTree.from_dict(t) for t in trees] for trees in d["rounds"]],
            BoostParams(**d["params"]),
            int(d["n_features"]),
            list(d["train_loss"]),
        )


def gbt_fit(ds=None, params: BoostParams = BoostParams(), seed: int = 0, *, x=None, y=None, n_classes=None) -> GradientBoostedModel:
    """Softmax boosting with one Newton regression tree per class per round.

    Gradients are ``p_c - 1{y=c}``, hessians ``p_c (1 - p_c)``; leaves take
    ``-G / (H + l2_lambda)``. Base scores are the log class priors. ``seed``
    is accepted for interface symmetry; fitting uses no randomness.
    """
    if params.n_estimators < 0 or params.learning_rate < 0:
        raise ConfigError("n_estimators and learning_rate must be nonnegative")
    x, y, m = _unpack(ds, x, y, n_classes)
    x, y = _check_xy(x, y)
    m = int(m) if m is not None else int(y.max()) + 1
    n = y.size
    prior = np.bincount(y, minlength=m) / n
    base = np.log(np.maximum(prior, 1e-12))
    f = np.tile(base, (n, 1))
    order, vals = _presort(x)
    onehot = np.zeros((n, m))
    onehot[np.arange(n), y] = 1.0
    depth = -1 if params.max_depth is None else int(params.max_depth)

    rounds = []
    losses = [_log_loss(f, y)]
    for _ in range(params.n_estimators):
        p = _softmax(f)
        trees = []
        step = np.zeros_like(f)
        for c in range(m):
            g = np.ascontiguousarray(p[:, c] - onehot[:, c])
            h = np.ascontiguousarray(np.maximum(p[:, c] * (1.0 - p[:, c]), 1e-16))
            feat, thr, lft, rgt, val, gains, leaf_of = _grow_newton(
                vals.copy(), g, h, order.copy(), depth, float(params.l2_lambda), float(params.min_child_weight),
                float(params.min_split_gain),
            )
            trees.append(RegressionTree(feat, thr, lft, rgt, val, gains))
            step[:, c] = val[leaf_of]
        f = f + params.learning_rate * step
        rounds.append(trees)
        losses.append(_log_loss(f, y))
    return GradientBoostedModel(base, rounds, params, x.shape[1], losses)


def gbt_predict(model: GradientBoostedModel, x) -> np.ndarray:
    return model.predict(x)


def gbt_predict_proba(model: GradientBoostedModel, x) -> np.ndarray:
    return model.predict_proba(x)
