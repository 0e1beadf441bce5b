import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alqa.errors import ParameterError
from alqa.evaluation import (
    RaterPanel,
    accuracy,
    build_report,
    confusion_matrix,
    feature_significance,
    fuse_labels,
    rater_agreement,
    roc_auc_ovr,
)


def auc_by_pair_counting(scores, positive):
    """Independent Mann-Whitney oracle: wins + half-ties over all pairs."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    pos = scores[positive]
    neg = scores[~positive]
    num2 = 0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                num2 += 2
            elif sp == sn:
                num2 += 1
    return num2 / (2 * len(pos) * len(neg))


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_none_correct(self):
        assert accuracy([1, 1, 1], [2, 2, 2]) == 0.0

    def test_exact_fraction_on_large_panel(self):
        y = np.ones(582, dtype=int)
        y_hat = np.ones(582, dtype=int)
        y_hat[:39] = 2
        assert accuracy(y_hat, y) == 543 / 582

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            accuracy([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            accuracy([1], [1, 2])


class TestConfusion:
    def test_perfect_is_diagonal(self):
        y = [1, 2, 3, 4, 5, 3]
        m = confusion_matrix(y, y)
        assert m.sum() == 6
        assert np.all(m == np.diag(np.diag(m)))

    def test_single_off_diagonal_count(self):
        m = confusion_matrix([3], [2])
        assert m[1, 2] == 1 and m.sum() == 1

    def test_trace_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 60))
            y = rng.integers(1, 6, n)
            y_hat = rng.integers(1, 6, n)
            m = confusion_matrix(y_hat, y)
            assert np.trace(m) / m.sum() == accuracy(y_hat, y)
            assert m.sum() == n

    def test_out_of_range_rejected(self):
        with pytest.raises(ParameterError):
            confusion_matrix([0], [1])


class TestRocAuc:
    def test_perfect_separation(self):
        scores = np.zeros((6, 5))
        y = np.array([1, 1, 1, 2, 2, 2])
        scores[:3, 0] = [0.9, 0.8, 0.7]
        scores[3:, 0] = [0.2, 0.1, 0.3]
        out = roc_auc_ovr(scores, y)
        assert out[1]["auc"] == 1.0

    def test_all_ties_give_half(self):
        scores = np.full((8, 5), 0.2)
        y = np.array([1, 1, 2, 2, 3, 3, 4, 4])
        out = roc_auc_ovr(scores, y)
        assert out[1]["auc"] == 0.5
        assert out[1]["roc"] == [(0.0, 0.0), (1.0, 1.0)]

    def test_absent_class_reported_missing(self):
        scores = np.random.default_rng(0).random((6, 5))
        y = np.array([1, 1, 2, 2, 3, 3])
        out = roc_auc_ovr(scores, y)
        assert out[5]["auc"] is None and out[5]["roc"] is None

    def test_six_sample_mixed_case_matches_pair_counting(self):
        y = np.array([1, 2, 1, 2, 1, 2])
        col = np.array([0.9, 0.9, 0.5, 0.4, 0.2, 0.2])
        scores = np.zeros((6, 5))
        scores[:, 0] = col
        out = roc_auc_ovr(scores, y)
        assert out[1]["auc"] == auc_by_pair_counting(col, y == 1)

    def test_random_instances_match_pair_counting_exactly(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(2, 51))
            y = rng.integers(1, 4, n)
            if len(np.unique(y)) < 2:
                continue
            scores = np.round(rng.random((n, 5)), 2)  # force ties
            out = roc_auc_ovr(scores, y, n_classes=5)
            for k in (1, 2, 3):
                pos = y == k
                if pos.all() or not pos.any():
                    continue
                assert out[k]["auc"] == auc_by_pair_counting(scores[:, k - 1], pos)

    def test_non_finite_scores_rejected(self):
        scores = np.zeros((2, 5))
        scores[0, 0] = np.inf
        with pytest.raises(ParameterError):
            roc_auc_ovr(scores, np.array([1, 2]))


class TestFuseLabels:
    def test_odd_count_median(self):
        assert fuse_labels((1, 2, 2, 3, 5)) == 2

    def test_even_count_lower_median(self):
        assert fuse_labels((2, 3)) == 2

    def test_unanimous(self):
        assert fuse_labels((4, 4, 4, 4, 4)) == 4

    def test_matrix_form(self):
        panel = np.array([[1, 5], [2, 4], [2, 3]])
        np.testing.assert_array_equal(fuse_labels(panel), [2, 4])

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=9))
    @settings(max_examples=60, deadline=None)
    def test_invariant_to_rater_order(self, ratings):
        assert fuse_labels(ratings) == fuse_labels(sorted(ratings, reverse=True))

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            fuse_labels([])


class TestRaterAgreement:
    def test_perfect_agreement_is_one(self):
        labels = np.array([[1, 3, 5, 2], [1, 3, 5, 2], [1, 3, 5, 2]])
        assert rater_agreement(labels) == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_table(self):
        # 3 raters x 4 datasets, quadratic weights, K = 5. By hand:
        # weights by |i-j|: 1, 15/16, 3/4, 7/16, 0
        # item sums of w*n_j*n_k: 8.75, 9, 8, 8.75 -> P_i = (sum-3)/6
        # P_bar = 15/16; marginals (2,2,3,3,2)/12 -> P_e = 901/1152
        # kappa = (15/16 - 901/1152)/(1 - 901/1152) = 179/251
        labels = np.array([
            [1, 3, 2, 5],
            [1, 3, 4, 5],
            [2, 3, 4, 4],
        ])
        assert rater_agreement(labels) == pytest.approx(179 / 251, abs=1e-12)

    def test_unweighted_hand_example(self):
        # 2 raters x 2 items: [[1,2],[1,3]] -> P = 1/2, Pe = 3/8, kappa = 0.2
        labels = np.array([[1, 2], [1, 3]])
        k = rater_agreement(labels, weighting="unweighted")
        assert k == pytest.approx(0.2, abs=1e-12)

    def test_invariant_to_rater_permutation(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(1, 6, size=(5, 40))
        k1 = rater_agreement(labels)
        k2 = rater_agreement(labels[::-1])
        assert k1 == pytest.approx(k2, abs=1e-12)

    def test_null_panel_near_zero(self):
        rng = np.random.default_rng(2026)
        labels = rng.integers(1, 6, size=(5, 2000))
        k = rater_agreement(labels)
        assert -0.03 <= k <= 0.03

    def test_single_category_undefined(self):
        labels = np.full((3, 5), 2)
        assert rater_agreement(labels) is None

    def test_panel_object_filled(self):
        panel = RaterPanel(labels=np.array([[1, 2], [1, 2]]))
        k = rater_agreement(panel, g=4)
        assert panel.kappa == k and panel.g == 4

    def test_shape_validation(self):
        with pytest.raises(ParameterError):
            rater_agreement(np.array([[1, 2]]))  # one rater

    def test_linear_weighting_differs(self):
        labels = np.array([[1, 3, 2, 5], [1, 3, 4, 5], [2, 3, 4, 4]])
        kq = rater_agreement(labels, weighting="quadratic")
        kl = rater_agreement(labels, weighting="linear")
        assert kq != kl


class TestFeatureSignificance:
    def test_duplicated_feature_correlates_fully(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=200)
        x = np.column_stack([a, a, rng.normal(size=200)])
        rep = feature_significance(x)
        assert rep.correlation[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_independent_features_uncorrelated(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(10_000, 2))
        rep = feature_significance(x)
        assert abs(rep.correlation[0, 1]) < 0.05

    def test_null_pvalues_uniform(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(500, 60))
        rep = feature_significance(x)
        assert 0.01 <= rep.frac_p05 <= 0.10
        assert rep.frac_p01 <= rep.frac_p05

    def test_zero_variance_excluded(self):
        rng = np.random.default_rng(2)
        x = np.column_stack([rng.normal(size=50), np.full(50, 3.0),
                             rng.normal(size=50)])
        rep = feature_significance(x)
        assert rep.excluded == [1]
        assert rep.kept == [0, 2]
        assert rep.correlation.shape == (2, 2)

    def test_class_precondition(self):
        x = np.random.default_rng(3).normal(size=(10, 4))
        y = np.array([1] * 9 + [2])
        with pytest.raises(ParameterError):
            feature_significance(x, y)

    def test_separated_means_significant(self):
        rng = np.random.default_rng(4)
        x = np.column_stack([rng.normal(0, 1, 400), rng.normal(5, 1, 400)])
        rep = feature_significance(x)
        assert rep.pvalues[0, 1] < 1e-6


class TestReport:
    def test_round_trips_to_json(self):
        rng = np.random.default_rng(5)
        y = rng.integers(1, 6, 40)
        y_hat = rng.integers(1, 6, 40)
        scores = rng.random((40, 5))
        scores /= scores.sum(axis=1, keepdims=True)
        rep = build_report(y, y_hat, scores)
        payload = json.dumps(rep.to_dict())
        parsed = json.loads(payload)
        assert parsed["n_test"] == 40
        assert np.isclose(parsed["accuracy"], accuracy(y_hat, y))
        assert np.array(parsed["confusion"]).sum() == 40
