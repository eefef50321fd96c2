from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CLASSES, GBT_PROGRESSIVE_COUNTS, RF_PKI_COUNTS, TEST_ROW_SUMS
from pki_apt.dataset import ClassIndex
from pki_apt.metrics import (
    ConfusionMatrix,
    confusion_matrix,
    macro_f1,
    macro_f1_score,
    per_class_report,
    render_confusion,
    summarize,
    weighted_f1,
)


def exact_macro_f1(counts):
    """Rational-arithmetic reference with the zero-division-is-zero rule."""
    counts = [[int(v) for v in row] for row in counts]
    m = len(counts)
    f1s = []
    for i in range(m):
        tp = counts[i][i]
        pred = sum(counts[r][i] for r in range(m))
        true = sum(counts[i])
        p = Fraction(tp, pred) if pred else Fraction(0)
        r = Fraction(tp, true) if true else Fraction(0)
        f1s.append(2 * p * r / (p + r) if p + r else Fraction(0))
    return float(sum(f1s) / m)


def _cm(counts):
    return ConfusionMatrix(np.asarray(counts, dtype=np.int64), ClassIndex(tuple(f"c{i}" for i in range(len(counts)))))


def test_identity_matrix():
    assert confusion_matrix([0, 1], [0, 1], 2).counts.tolist() == [[1, 0], [0, 1]]


def test_mixed_matrix_and_half_scores():
    cm = confusion_matrix([0, 0, 1, 1], [0, 1, 0, 1], 2)
    assert cm.counts.tolist() == [[1, 1], [1, 1]]
    rep = per_class_report(cm)
    assert rep.precision.tolist() == [0.5, 0.5]
    assert rep.recall.tolist() == [0.5, 0.5]
    assert rep.f1.tolist() == [0.5, 0.5]


def test_never_predicted_class():
    rep = per_class_report(confusion_matrix([0, 1, 1], [1, 1, 1], 2))
    assert rep.precision[0] == 0.0 and rep.f1[0] == 0.0


def test_zero_support_class_counts_in_macro():
    cm = confusion_matrix([0, 0], [0, 0], 2)
    assert macro_f1(cm) == 0.5


def test_perfect_predictions():
    assert macro_f1_score([0, 1, 2, 2], [0, 1, 2, 2], 3) == 1.0


def test_rf_pki_matrix_de_row():
    rep = per_class_report(_cm(RF_PKI_COUNTS))
    assert rep.precision[0] == pytest.approx(33 / 58, abs=1e-12)
    assert rep.recall[0] == pytest.approx(33 / 74, abs=1e-12)
    assert rep.f1[0] == pytest.approx(0.500, abs=5e-4)


def test_reference_matrices_against_rational_arithmetic():
    for counts in (RF_PKI_COUNTS, GBT_PROGRESSIVE_COUNTS):
        assert macro_f1(_cm(counts)) == pytest.approx(exact_macro_f1(counts), abs=1e-12)
    assert macro_f1(_cm(GBT_PROGRESSIVE_COUNTS)) == pytest.approx(0.8137, abs=5e-4)
    assert macro_f1(_cm(RF_PKI_COUNTS)) == pytest.approx(0.8128, abs=5e-4)


def test_row_sums_match_test_counts():
    assert _cm(GBT_PROGRESSIVE_COUNTS).support.tolist() == TEST_ROW_SUMS


def test_render_reproduces_all_counts():
    cm = ConfusionMatrix(GBT_PROGRESSIVE_COUNTS, ClassIndex(CLASSES))
    lines = render_confusion(cm).splitlines()
    body = [[int(v) for v in line.split()[1:]] for line in lines[:6]]
    assert body == GBT_PROGRESSIVE_COUNTS.tolist()


def test_round_trip():
    cm = ConfusionMatrix(RF_PKI_COUNTS, ClassIndex(CLASSES))
    assert np.array_equal(ConfusionMatrix.from_dict(cm.to_dict()).counts, cm.counts)


labels = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60)


@settings(max_examples=100, deadline=None)
@given(labels)
def test_macro_matches_reference(pairs):
    yt, yp = zip(*pairs)
    cm = confusion_matrix(list(yt), list(yp), 4)
    assert cm.total == len(pairs)
    assert macro_f1(cm) == pytest.approx(exact_macro_f1(cm.counts), abs=1e-12)
    assert 0.0 <= weighted_f1(cm) <= 1.0


@settings(max_examples=100, deadline=None)
@given(labels, st.permutations(range(4)))
def test_macro_invariant_to_class_relabelling(pairs, perm):
    yt, yp = (np.array(v) for v in zip(*pairs))
    perm = np.array(perm)
    a = macro_f1(confusion_matrix(yt, yp, 4))
    b = macro_f1(confusion_matrix(perm[yt], perm[yp], 4))
    assert a == b


def test_summary_dict_shape():
    s = summarize(ConfusionMatrix(RF_PKI_COUNTS, ClassIndex(CLASSES)))
    d = s.to_dict()
    assert set(d["per_class"]) == set(CLASSES)
    assert d["per_class"]["NT"]["support"] == 55583
