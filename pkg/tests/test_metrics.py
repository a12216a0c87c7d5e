import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bronchograde.metrics import (
    METRIC_COLUMNS,
    ConfusionMatrix,
    MetricsError,
    compute_metrics,
    confusion_matrix,
    format_metrics_table,
    metrics_rows,
    read_metrics_csv,
    write_metrics_csv,
)
from oracles import labels_from_cm, metrics_oracle


def quiet_metrics(cm, average="macro"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return compute_metrics(cm, average)


def test_hand_counted_confusion():
    cm = confusion_matrix([1, 2, 2], [1, 2, 1], k=2)
    assert cm.counts.tolist() == [[1, 0], [1, 1]]


def test_perfect_predictions_give_diagonal_and_ones():
    labels = [1, 2, 3, 4, 5, 6, 3, 3]
    cm = confusion_matrix(labels, labels)
    assert np.array_equal(cm.counts, np.diag(np.bincount(labels, minlength=7)[1:]))
    assert all(v == 1.0 for v in compute_metrics(cm).macro.values())


def test_empty_inputs_give_zero_matrix_and_metrics_error():
    cm = confusion_matrix([], [])
    assert cm.total == 0 and cm.counts.shape == (6, 6)
    with pytest.raises(MetricsError):
        compute_metrics(cm)


def test_input_validation():
    with pytest.raises(MetricsError):
        confusion_matrix([1, 2], [1])
    with pytest.raises(MetricsError):
        confusion_matrix([1, 7], [1, 2])
    with pytest.raises(MetricsError):
        ConfusionMatrix(np.array([[1, -1], [0, 1]]))
    with pytest.raises(MetricsError):
        compute_metrics(ConfusionMatrix(np.eye(2, dtype=int)), average="harmonic")


def test_three_class_anchor_matches_oracle_and_stated_values():
    counts = [[5, 1, 0], [1, 3, 1], [0, 1, 4]]
    oracle = metrics_oracle(*labels_from_cm(counts), 3)
    assert oracle["Accuracy"] == 0.75
    assert oracle["Precision"] == pytest.approx(0.7444, abs=1e-4)
    assert oracle["Specificity"] == pytest.approx(0.8758, abs=1e-4)
    got = compute_metrics(ConfusionMatrix(np.array(counts))).macro
    assert got["Accuracy"] == 0.75
    for k in ("Precision", "Sensitivity", "F1"):
        assert got[k] == pytest.approx(0.7444, abs=1e-4)
    assert got["Specificity"] == pytest.approx(0.8758, abs=1e-4)
    for k in METRIC_COLUMNS:
        assert abs(got[k] - oracle[k]) <= 1e-12


def test_absent_class_reports_zero_with_warning():
    cm = confusion_matrix([1, 1, 2], [1, 2, 2], k=3)
    with pytest.warns(UserWarning, match="class 3"):
        rep = compute_metrics(cm)
    assert rep.precision[2] == 0.0 and rep.sensitivity[2] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6).flatmap(lambda k: st.tuples(
    st.just(k),
    st.lists(st.tuples(st.integers(1, k), st.integers(1, k)), min_size=1, max_size=200),
)))
def test_matches_bruteforce_oracle(case):
    k, pairs = case
    true, pred = zip(*pairs)
    got = quiet_metrics(confusion_matrix(true, pred, k)).macro
    want = metrics_oracle(true, pred, k)
    for key in METRIC_COLUMNS:
        assert abs(got[key] - want[key]) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_invariant_under_class_relabeling(k, seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 10, (k, k))
    counts[0, 0] += 1
    perm = rng.permutation(k)
    a = quiet_metrics(ConfusionMatrix(counts)).macro
    b = quiet_metrics(ConfusionMatrix(counts[np.ix_(perm, perm)])).macro
    for key in METRIC_COLUMNS:
        assert a[key] == pytest.approx(b[key], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_invariant_under_count_scaling(k, factor, seed):
    counts = np.random.default_rng(seed).integers(0, 10, (k, k))
    counts[0, 0] += 1
    a = quiet_metrics(ConfusionMatrix(counts)).macro
    b = quiet_metrics(ConfusionMatrix(counts * factor)).macro
    for key in METRIC_COLUMNS:
        assert a[key] == pytest.approx(b[key], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=4, max_size=4).filter(lambda v: sum(v) > 0))
def test_binary_sensitivity_specificity_swap(v):
    rep = quiet_metrics(ConfusionMatrix(np.array(v).reshape(2, 2)))
    assert rep.sensitivity[0] == pytest.approx(rep.specificity[1])
    assert rep.sensitivity[1] == pytest.approx(rep.specificity[0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_in_unit_interval_and_accuracy_is_trace_ratio(seed):
    counts = np.random.default_rng(seed).integers(0, 6, (6, 6))
    counts[2, 2] += 1
    rep = quiet_metrics(ConfusionMatrix(counts))
    assert rep.accuracy == np.trace(counts) / counts.sum()
    for arr in (rep.precision, rep.sensitivity, rep.specificity, rep.f1):
        assert np.all((arr >= 0) & (arr <= 1))


def test_micro_and_weighted_flags():
    counts = np.array([[5, 1, 0], [1, 3, 1], [0, 1, 4]])
    micro = compute_metrics(ConfusionMatrix(counts), "micro").macro
    # pooled counts: micro precision = micro sensitivity = accuracy for single-label data
    assert micro["Precision"] == pytest.approx(0.75) and micro["Sensitivity"] == pytest.approx(0.75)
    weighted = compute_metrics(ConfusionMatrix(counts), "weighted")
    support = counts.sum(1)
    assert weighted.macro["Sensitivity"] == pytest.approx(np.sum(np.diag(counts) / support * support / support.sum()))


def test_csv_roundtrip_and_table_layout(tmp_path):
    rep = compute_metrics(ConfusionMatrix(np.array([[5, 1, 0], [1, 3, 1], [0, 1, 4]])))
    rows = metrics_rows([("inception_cnn", "original", rep), ("inception_cnn", "cut", rep)])
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["backbone", "method", *METRIC_COLUMNS]
    back = read_metrics_csv(path)
    assert len(back) == 2 and back[0]["Accuracy"] == 0.75
    text = format_metrics_table(back)
    assert "Original" in text and "CUT" in text and all(c in text.splitlines()[0] for c in METRIC_COLUMNS)
