"""Acceptance criteria, one check per criterion.

Run under pytest (``pytest tests/test_acceptance.py -s``) or directly
(``python3 tests/test_acceptance.py``); either way every criterion prints
one PASS/FAIL line with its measured value and runtime.
"""

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import CLASSES, GBT_PROGRESSIVE_COUNTS, RF_PKI_COUNTS  # noqa: E402
from suites import COVARIANCE_TYPES, mixture_2d, non_decreasing, non_increasing  # noqa: E402
from pki_apt.clustering import ClusterSpec, gmm_fit, kmeans_fit  # noqa: E402
from pki_apt.dataset import ClassIndex, SplitSpec, stratified_split  # noqa: E402
from pki_apt.featsel import anova_f_scores, chi2_scores, mutual_info_scores  # noqa: E402
from pki_apt.metrics import ConfusionMatrix, confusion_matrix, macro_f1, weighted_f1  # noqa: E402
from pki_apt.pki import pki_train, progressive_pki_train  # noqa: E402
from pki_apt.supervised import SupervisedSpec, fit_supervised  # noqa: E402
from pki_apt.synthetic import SCVIC_TEST_COUNTS, SCVIC_TRAIN_COUNTS, SyntheticSpec, generate_synthetic  # noqa: E402
from pki_apt.trees import BoostParams, TreeParams, cart_fit, gbt_fit  # noqa: E402

DATASET_ENV = "PKI_APT_DATASET"
RESULT_LINES: list[str] = []


def _cm(counts):
    return ConfusionMatrix(np.asarray(counts), ClassIndex(CLASSES))


def check_1():
    f1 = macro_f1(_cm(GBT_PROGRESSIVE_COUNTS))
    return abs(f1 - 0.8137) <= 5e-4, f"macro-F1 {f1:.6f} (target 0.8137 +/- 0.0005)", 1.0


def check_2():
    f1 = macro_f1(_cm(RF_PKI_COUNTS))
    ok = abs(f1 - 0.8128) <= 5e-4 and abs(f1 - 0.8103) <= 0.01
    return ok, f"macro-F1 {f1:.6f} (target 0.8128 +/- 0.0005; reference 0.8103, gap {f1 - 0.8103:+.4f})", 1.0


def check_3():
    bad = []
    for seed in range(100):
        x = mixture_2d(seed)
        for cov in COVARIANCE_TYPES:
            if not non_decreasing(gmm_fit(x, 3, cov, seed=seed).loglik_trace, rel=1e-8):
                bad.append((seed, cov))
    return not bad, f"{400 - len(bad)}/400 traces non-decreasing", 30.0


def check_4():
    bad, mismatched = [], []
    for seed in range(100):
        x = mixture_2d(seed)
        a = kmeans_fit(x, 3, seed=seed)
        if not non_increasing(a.inertia_trace, rel=1e-8):
            bad.append(seed)
        if a.centroids.tobytes() != kmeans_fit(x, 3, seed=seed).centroids.tobytes():
            mismatched.append(seed)
    ok = not bad and not mismatched
    return ok, f"{100 - len(bad)}/100 inertia traces non-increasing, {100 - len(mismatched)}/100 bit-identical refits", 10.0


def check_5():
    rel = lambda a, b: abs(a - b) / abs(b)  # noqa: E731
    y2 = np.array([0, 0, 1, 1])
    c = chi2_scores((np.array([[1.0], [3.0], [2.0], [0.0]]), y2)).scores[0]
    f = anova_f_scores((np.array([[1.0], [2.0], [3.0], [4.0]]), y2)).scores[0]
    yb = np.array([0, 1] * 50)
    mi = mutual_info_scores((yb[:, None].astype(float), yb)).scores[0]
    ok = rel(c, 2 / 3) <= 1e-9 and rel(f, 8.0) <= 1e-9 and rel(mi, np.log(2)) <= 1e-9

    from test_featsel import chi2_loops, mi_loops
    from scipy.stats import f_oneway

    rng = np.random.default_rng(0)
    x = rng.uniform(0, 10, size=(50, 5))
    y = rng.integers(0, 3, 50)
    agree = (
        np.allclose(chi2_scores((x, y)).scores, chi2_loops(x, y), rtol=1e-9, atol=0)
        and np.allclose(anova_f_scores((x, y)).scores,
                        [f_oneway(*(x[y == k, j] for k in range(3))).statistic for j in range(5)], rtol=1e-9, atol=0)
        and np.allclose(mutual_info_scores((x, y)).scores,
                        [mi_loops(x[:, j].tolist(), y, 10) for j in range(5)], rtol=1e-9, atol=0)
    )
    return ok and agree, f"chi2 {c:.12f}, F {f:.12f}, MI {mi:.12f}, brute-force agreement {agree}", 5.0


def check_6():
    train, test = generate_synthetic(SyntheticSpec(n_features=12, seed=6))
    fit, val = stratified_split(train, SplitSpec(0.2, 6))
    details = []
    ok = True
    for kind, params in (("rf", {"n_trees": 30}), ("gbt", {"n_estimators": 30, "max_depth": 4})):
        spec = SupervisedSpec(kind, params)
        model, _ = pki_train(fit, val, ClusterSpec("gmm"), spec, k_candidates=[1], seed=6)
        bare = fit_supervised(spec, fit.x, fit.y, fit.n_classes, 6)
        same = np.array_equal(model.predict(test.x), bare.predict(test.x))
        ok &= same and model.stack.size == 0
        details.append(f"{kind} identical={same}")
    return ok, ", ".join(details), 30.0


def check_7():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    tree = cart_fit(x=x, y=y, n_classes=2, params=TreeParams())
    splits = int((~tree.is_leaf()).sum())
    cart_ok = splits == 1 and tree.threshold[0] == 2.5 and (tree.predict(x) == y).all()

    rng = np.random.default_rng(7)
    xb = rng.normal(size=(300, 5))
    yb = np.digitize(xb[:, 0] + 0.5 * rng.normal(size=300), [-0.5, 0.8])
    prior = np.bincount(yb).argmax()
    flat = gbt_fit(x=xb, y=yb, n_classes=3, params=BoostParams(n_estimators=5, learning_rate=0.0))
    prior_ok = bool((flat.predict(xb) == prior).all())

    loss = np.array(gbt_fit(x=xb, y=yb, n_classes=3, params=BoostParams(n_estimators=50, max_depth=3)).train_loss)
    loss_ok = bool((np.diff(loss) <= 1e-8 * loss[:-1]).all())
    ok = cart_ok and prior_ok and loss_ok
    return ok, (f"CART splits={splits} threshold={tree.threshold[0]}, lr=0 prior-argmax {prior_ok}, "
                f"log-loss {loss[0]:.4f}->{loss[-1]:.4f} non-increasing {loss_ok}"), 10.0


LATENT_SEEDS = range(5)
LATENT_GAIN = 0.05


def latent_advantage(seed):
    spec = SyntheticSpec(
        class_names=("DE", "NT", "R"), train_counts=(300, 1500, 300), test_counts=(100, 500, 100),
        n_features=6, separation=4.0, latent_clusters=True, latent_dims=8, cluster_separation=6.0, seed=seed,
    )
    train, _ = generate_synthetic(spec)
    fit, val = stratified_split(train, SplitSpec(0.2, seed))
    sup = SupervisedSpec("rf", {"n_trees": 25, "max_depth": 3})
    base = fit_supervised(sup, fit.x, fit.y, fit.n_classes, seed)
    base_f1 = macro_f1(confusion_matrix(val.y, base.predict(val.x), 3))
    _, trace = progressive_pki_train(fit, val, ClusterSpec("kmeans"), sup, max_stack=5, seed=seed, k_candidates=range(1, 7))
    return base_f1, trace.best_score


def check_8():
    gains = []
    for seed in LATENT_SEEDS:
        base, prog = latent_advantage(seed)
        gains.append(prog - base)
    wins = sum(g >= LATENT_GAIN for g in gains)
    return wins >= 4, f"{wins}/5 seeds gain >= {LATENT_GAIN} (gains {', '.join(f'{g:+.3f}' for g in gains)})", 300.0


def check_9():
    spec = SyntheticSpec(train_counts=SCVIC_TRAIN_COUNTS, test_counts=SCVIC_TEST_COUNTS, seed=9)
    train, test = generate_synthetic(spec)
    majority = int(np.bincount(train.y).argmax())
    cm = confusion_matrix(test.y, np.full(test.n, majority), test.class_index)
    w, m = weighted_f1(cm), macro_f1(cm)
    share = test.class_counts()[majority] / test.n
    return w >= 0.95 and m <= 0.20, f"majority share {share:.3f}, weighted-F1 {w:.4f}, macro-F1 {m:.4f}", 10.0


def check_10():
    root = os.environ.get(DATASET_ENV)
    if not root or not (Path(root) / "train.csv").exists():
        return None, f"dataset not present (set {DATASET_ENV} to a directory with train.csv and test.csv)", None
    from pki_apt.config import load_config
    from pki_apt.runner import Experiment

    cfg = load_config(data={"train_csv": str(Path(root) / "train.csv"), "test_csv": str(Path(root) / "test.csv"),
                            "classes": list(CLASSES)}, jobs=os.cpu_count() or 1)
    report = Experiment(cfg).run()
    st = report["stages"]
    rf_b1 = st["baseline1"]["rf"]["test"]["macro_f1"]
    best_pki = max(e["test"]["macro_f1"] for e in st["pki"].values())
    tuned = st["grid"]["test"]["macro_f1"]
    ok = abs(rf_b1 - 0.752) <= 0.05 and abs(best_pki - 0.8103) <= 0.03 and abs(tuned - 0.8137) <= 0.03
    return ok, f"RF baseline {rf_b1:.4f} (0.752), best PKI {best_pki:.4f} (0.8103), tuned {tuned:.4f} (0.8137)", None


CRITERIA = {
    1: ("metric oracle, best progressive matrix", check_1),
    2: ("metric oracle, RF PKI matrix", check_2),
    3: ("EM log-likelihood monotone", check_3),
    4: ("Lloyd inertia monotone and deterministic", check_4),
    5: ("feature-score oracles", check_5),
    6: ("k = 1 PKI equals bare model", check_6),
    7: ("tree sanity", check_7),
    8: ("constructed latent-cluster advantage", check_8),
    9: ("imbalance: majority predictor", check_9),
    10: ("full-dataset reproduction (informational)", check_10),
}


def _emit(line):
    RESULT_LINES.append(line)
    print(line)


def run_criterion(n):
    name, fn = CRITERIA[n]
    t0 = time.perf_counter()
    ok, detail, budget = fn()
    dt = time.perf_counter() - t0
    if ok is None:
        _emit(f"SKIP [{n:2d}] {name}: {detail}")
        return None, detail
    in_time = budget is None or dt < budget
    status = "PASS" if ok and in_time else "FAIL"
    limit = "" if budget is None else f" / budget {budget:g}s"
    _emit(f"{status} [{n:2d}] {name}: {detail} [{dt:.2f}s{limit}]")
    return ok and in_time, detail


@pytest.mark.parametrize("n", [n for n in CRITERIA if n != 10])
def test_criterion(n):
    ok, detail = run_criterion(n)
    assert ok, detail


@pytest.mark.dataset
def test_full_dataset_reproduction():
    ok, detail = run_criterion(10)
    if ok is None:
        pytest.skip(detail)
    if not ok:
        # informational: the reference seeds and hyperparameters are unknown
        pytest.xfail(detail)


if __name__ == "__main__":
    results = [run_criterion(n)[0] for n in CRITERIA]
    gating = [r for n, r in zip(CRITERIA, results) if n != 10]
    print(f"\n{sum(bool(r) for r in gating)}/{len(gating)} gating criteria passed")
    sys.exit(0 if all(gating) else 1)
