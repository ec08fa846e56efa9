"""Metric oracles: hand-computed confusion/AUC/AP/decision-curve values,
brute-force pair-counting agreement for AUC, rank-statistic invariances,
and splitter contracts for stratified k-fold and leave-one-site-out."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocircuit.errors import DataError
from neurocircuit.metrics import (average_precision, basic_metrics,
                                  confusion_counts, decision_curve,
                                  loso_splits, roc_auc,
                                  site_weighted_average, stratified_kfold)
from neurocircuit.rng import RngStream


def brute_force_auc(y, s):
    """O(P*N) pair enumeration: ties credit one half."""
    y = np.asarray(y)
    s = np.asarray(s, dtype=float)
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(pos) * len(neg))


# ---------------------------------------------------------------- confusion


def test_confusion_hand_case():
    # TP=3, FP=1, FN=1, TN=5
    y = [1, 1, 1, 0, 1, 0, 0, 0, 0, 0]
    s = [0.9, 0.8, 0.7, 0.6, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1]
    assert confusion_counts(y, s) == {"tp": 3, "fp": 1, "tn": 5, "fn": 1}
    m = basic_metrics(y, s)
    assert m["acc"] == pytest.approx(0.8)
    assert m["sen"] == pytest.approx(0.75)
    assert m["f1"] == pytest.approx(0.75)
    assert m["spe"] == pytest.approx(5 / 6)
    assert m["n"] == 10


def test_perfect_scores_saturate_every_metric():
    y = [1, 1, 0, 0]
    s = [0.9, 0.8, 0.3, 0.1]
    m = basic_metrics(y, s)
    assert (m["acc"], m["sen"], m["spe"], m["f1"]) == (1.0, 1.0, 1.0, 1.0)
    assert m["auc"] == 1.0
    assert m["ap"] == 1.0


def test_all_positive_predictions():
    y = [1, 0, 1, 0]
    s = [0.9, 0.9, 0.9, 0.9]
    m = basic_metrics(y, s)
    assert m["sen"] == 1.0
    assert m["spe"] == 0.0


def test_single_class_metrics_absent_not_zero():
    m = basic_metrics([1, 1, 1], [0.9, 0.2, 0.4])
    assert m["spe"] is None
    assert m["auc"] is None
    m = basic_metrics([0, 0], [0.9, 0.2])
    assert m["sen"] is None
    assert m["ap"] is None


def test_validation_rejects_bad_inputs():
    with pytest.raises(DataError):
        roc_auc([0, 1], [0.5])
    with pytest.raises(DataError):
        roc_auc([0, 2], [0.5, 0.5])
    with pytest.raises(DataError):
        roc_auc([], [])
    with pytest.raises(DataError):
        roc_auc([0, 1], [0.5, np.nan])


# --------------------------------------------------------------------- AUC


def test_auc_hand_cases():
    assert roc_auc([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1]) == 1.0
    # exhaustive pairs: (0.9,0.2) ok, (0.9,0.8) ok, (0.1,0.2) no, (0.1,0.8) no
    assert roc_auc([1, 0, 0, 1], [0.9, 0.2, 0.8, 0.1]) == 0.5
    assert roc_auc([1, 0], [0.5, 0.5]) == 0.5  # single tied pair


def test_auc_label_flip_symmetry():
    rng = RngStream(1, "flip")
    s = np.round(rng.child("s").uniform(50), 2)  # rounding forces ties
    y = (rng.child("y").uniform(50) < 0.5).astype(int)
    y[0], y[1] = 0, 1
    assert roc_auc(1 - y, s) == pytest.approx(1.0 - roc_auc(y, s), abs=1e-15)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1),
                          st.integers(0, 10)), min_size=2, max_size=40))
def test_auc_matches_brute_force_pair_counting(pairs):
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs], dtype=float) / 10.0
    expected = brute_force_auc(y, s)
    if expected is None:
        assert roc_auc(y, s) is None
    else:
        assert roc_auc(y, s) == expected


def test_auc_and_ap_invariant_under_monotone_transform():
    rng = RngStream(2, "mono")
    s = np.round(rng.child("s").uniform(80), 2)
    y = (rng.child("y").uniform(80) < 0.4).astype(int)
    y[:2] = [0, 1]
    warped = 0.1 + 0.8 * s ** 2  # strictly increasing on [0, 1]
    assert roc_auc(y, warped) == roc_auc(y, s)
    assert average_precision(y, warped) == average_precision(y, s)


# ---------------------------------------------------------------------- AP


def test_ap_perfect_and_single_positive():
    assert average_precision([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1]) == 1.0
    assert average_precision([1, 0, 0, 0], [0.9, 0.3, 0.2, 0.1]) == 1.0


def test_ap_all_tied_scores_equals_prevalence():
    y = [1, 0, 0, 1, 0]
    assert average_precision(y, [0.5] * 5) == pytest.approx(0.4, abs=1e-15)


def test_ap_uniform_scores_near_prevalence_baseline():
    rng = RngStream(3, "baseline")
    n = 10_000
    y = np.zeros(n, dtype=int)
    y[rng.child("pos").choice(n, size=5180)] = 1  # prevalence 0.518
    s = rng.child("scores").uniform(n)
    assert average_precision(y, s) == pytest.approx(0.518, abs=0.05)


# ------------------------------------------------------------ decision curve


def test_decision_curve_hand_case():
    # N=10: 4 true positives and 2 false positives at threshold 0.5
    y = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
    s = [0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1]
    row = decision_curve(y, s, [0.5])[0]
    assert row["net_benefit"] == pytest.approx(0.2, abs=1e-12)
    assert row["treat_none"] == 0.0


def test_decision_curve_perfect_classifier_nets_prevalence():
    y = np.array([1, 1, 1, 0, 0, 0, 0, 0])
    s = y.astype(float)
    for row in decision_curve(y, s, [0.25, 0.5, 0.75]):
        assert row["net_benefit"] == pytest.approx(y.mean(), abs=1e-12)


def test_decision_curve_rejects_degenerate_thresholds():
    for t in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(DataError):
            decision_curve([0, 1], [0.2, 0.8], [t])


# ------------------------------------------------------------------ k-fold


def test_kfold_balanced_ten_subjects():
    labels = [1, 0] * 5
    splits = stratified_kfold(labels, 5, seed=11)
    y = np.array(labels)
    all_test = []
    for train, test in splits:
        assert len(test) == 2
        assert y[test].sum() == 1  # exactly one of each class
        assert len(np.intersect1d(train, test)) == 0
        all_test.extend(test.tolist())
    assert sorted(all_test) == list(range(10))


def test_kfold_deterministic_in_seed():
    labels = ([1] * 13) + ([0] * 17)
    a = stratified_kfold(labels, 5, seed=4)
    b = stratified_kfold(labels, 5, seed=4)
    c = stratified_kfold(labels, 5, seed=5)
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    assert any(not np.array_equal(x[1], y[1]) for x, y in zip(a, c))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31), st.integers(6, 25),
       st.integers(6, 25))
def test_kfold_class_proportions_within_one(k, seed, n_pos, n_neg):
    labels = np.array([1] * n_pos + [0] * n_neg)
    if min(n_pos, n_neg) < k:
        with pytest.raises(DataError):
            stratified_kfold(labels, k, seed)
        return
    splits = stratified_kfold(labels, k, seed)
    for cls in (0, 1):
        counts = [int((labels[test] == cls).sum()) for _, test in splits]
        assert max(counts) - min(counts) <= 1


def test_kfold_rejects_bad_k_and_scarce_classes():
    with pytest.raises(DataError):
        stratified_kfold([0, 1, 0, 1], 1, seed=0)
    with pytest.raises(DataError):
        stratified_kfold([0, 1], 3, seed=0)
    with pytest.raises(DataError):
        stratified_kfold([1, 1, 1, 0, 0, 0, 0, 0], 5, seed=0)


# -------------------------------------------------------------------- LOSO


def test_loso_one_split_per_site():
    sites = ["a", "b", "a", "c", "b", "a"]
    splits = loso_splits(sites)
    assert [name for _, _, name in splits] == ["a", "b", "c"]
    for train, test, name in splits:
        arr = np.asarray(sites)
        assert set(arr[test]) == {name}
        assert name not in set(arr[train])
        assert len(np.intersect1d(train, test)) == 0


def test_loso_requires_two_sites():
    with pytest.raises(DataError):
        loso_splits(["only", "only", "only"])


def test_site_weighted_average_oracles():
    assert site_weighted_average([0.6, 0.8], [10, 30]) == pytest.approx(0.75)
    assert site_weighted_average([0.4, 0.9], [7, 7]) == pytest.approx(0.65)
    with pytest.raises(DataError):
        site_weighted_average([0.5], [1, 2])
    with pytest.raises(DataError):
        site_weighted_average([], [])
