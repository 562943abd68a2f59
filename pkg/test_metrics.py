"""Confusion matrix and metric suite tests."""

# run these tests like:
#
#    python -m unittest test_metrics.py


from unittest import TestCase

import numpy as np
from hypothesis import given, settings, strategies as st
from sklearn.metrics import accuracy_score, balanced_accuracy_score, precision_recall_fscore_support
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

from errors import LabelError, ParameterError, ProtocolError
from metrics import compute_metrics, confusion_matrix, fold_mean

square_matrices = st.integers(2, 6).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 20), min_size=n, max_size=n), min_size=n, max_size=n))


def literal_metrics(cm):
    """Per-class P/R/F1, UA and WA transcribed entry by entry."""

    n = len(cm)
    precision, recall, f1 = [], [], []
    for o in range(n):
        tp = cm[o][o]
        fp = sum(cm[i][o] for i in range(n)) - tp
        fn = sum(cm[o][j] for j in range(n)) - tp
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    total = sum(sum(row) for row in cm)
    wa = sum(cm[i][i] for i in range(n)) / total
    return precision, recall, f1, sum(recall) / n, wa


class ConfusionMatrixTestCase(TestCase):
    """Counting predictions against truth."""

    def test_hand_count(self):
        """Does [0,1,1,2] vs [0,1,2,2] fill exactly (0,0), (1,1), (2,1), (2,2)?"""

        cm = confusion_matrix([0, 1, 1, 2], [0, 1, 2, 2])
        expected = np.zeros((5, 5), dtype=int)
        expected[0, 0] = expected[1, 1] = expected[2, 1] = expected[2, 2] = 1
        np.testing.assert_array_equal(cm, expected)

    def test_perfect(self):
        """Is a perfect prediction a diagonal of class supports?"""

        labels = [0, 0, 1, 3, 3, 3, 4]
        np.testing.assert_array_equal(confusion_matrix(labels, labels), np.diag([2, 1, 0, 3, 1]))

    def test_random_matches_sklearn(self):
        """Do 200 random predictions count like sklearn with rows summing to supports?"""

        rng = np.random.default_rng(0)
        labels, preds = rng.integers(0, 5, 200), rng.integers(0, 5, 200)
        cm = confusion_matrix(preds, labels)
        np.testing.assert_array_equal(cm, sk_confusion_matrix(labels, preds, labels=range(5)))
        np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(labels, minlength=5))

    def test_errors(self):
        """Are length mismatches and out-of-range ids rejected?"""

        with self.assertRaises(ParameterError):
            confusion_matrix([0, 1], [0])
        with self.assertRaises(LabelError):
            confusion_matrix([0, 5], [0, 1])


class ComputeMetricsTestCase(TestCase):
    """Precision, recall, F1, UA and WA."""

    def test_perfect(self):
        """Are all metrics exactly 1 for perfect predictions?"""

        report = compute_metrics(np.diag([3, 2, 4, 1, 5]))
        for values in (report.precision, report.recall, report.f1):
            np.testing.assert_array_equal(values, np.ones(5))
        self.assertEqual((report.ua, report.wa, report.macro_f1), (1.0, 1.0, 1.0))
        self.assertEqual(report.flags, [])

    def test_two_class_hand_case(self):
        """Does [[3,1],[2,4]] give P 3/5, R 3/4, F1 2/3, WA 7/10, UA 17/24?"""

        report = compute_metrics(np.array([[3, 1], [2, 4]]))
        self.assertAlmostEqual(report.precision[0], 3 / 5, places=15)
        self.assertAlmostEqual(report.recall[0], 3 / 4, places=15)
        self.assertAlmostEqual(report.f1[0], 2 / 3, places=15)
        self.assertAlmostEqual(report.precision[1], 4 / 5, places=15)
        self.assertAlmostEqual(report.recall[1], 2 / 3, places=15)
        self.assertEqual(report.wa, 7 / 10)
        self.assertAlmostEqual(report.ua, 17 / 24, places=15)

    def test_literal_oracle(self):
        """Do 100 random 5×5 matrices agree with the literal transcription to 1e-12?"""

        rng = np.random.default_rng(1)
        for _ in range(100):
            cm = rng.integers(0, 15, (5, 5))
            cm[0, 0] += 1
            report = compute_metrics(cm)
            precision, recall, f1, ua, wa = literal_metrics(cm.tolist())
            np.testing.assert_allclose(report.precision, precision, rtol=0, atol=1e-12)
            np.testing.assert_allclose(report.recall, recall, rtol=0, atol=1e-12)
            np.testing.assert_allclose(report.f1, f1, rtol=0, atol=1e-12)
            self.assertAlmostEqual(report.ua, ua, delta=1e-12)
            self.assertAlmostEqual(report.wa, wa, delta=1e-12)

    def test_sklearn_oracle(self):
        """Do metrics agree with sklearn on label arrays rebuilt from a matrix?"""

        rng = np.random.default_rng(2)
        for _ in range(20):
            cm = rng.integers(1, 12, (5, 5))
            truth = np.repeat(np.repeat(np.arange(5), 5), cm.ravel())
            preds = np.repeat(np.tile(np.arange(5), 5), cm.ravel())
            p, r, f, _ = precision_recall_fscore_support(truth, preds, labels=range(5), zero_division=0)
            report = compute_metrics(cm)
            np.testing.assert_allclose(report.precision, p, atol=1e-12)
            np.testing.assert_allclose(report.recall, r, atol=1e-12)
            np.testing.assert_allclose(report.f1, f, atol=1e-12)
            self.assertAlmostEqual(report.ua, balanced_accuracy_score(truth, preds), delta=1e-12)
            self.assertAlmostEqual(report.wa, accuracy_score(truth, preds), delta=1e-12)

    def test_zero_denominators_flagged(self):
        """Is a never-predicted, never-present class scored 0 with flags?"""

        cm = np.array([[2, 0, 0], [1, 1, 0], [0, 0, 0]])
        report = compute_metrics(cm)
        self.assertEqual(report.precision[2], 0.0)
        self.assertEqual(report.recall[2], 0.0)
        self.assertIn("precision[2]", report.flags)
        self.assertIn("recall[2]", report.flags)
        self.assertIn("f1[2]", report.flags)

    def test_balanced_supports(self):
        """Is UA equal to WA when every class has the same support?"""

        rng = np.random.default_rng(3)
        for _ in range(20):
            cm = np.zeros((5, 5), dtype=int)
            for row in range(5):
                cm[row] = rng.multinomial(8, np.ones(5) / 5)
            report = compute_metrics(cm)
            self.assertAlmostEqual(report.ua, report.wa, delta=1e-12)

    @given(square_matrices, st.integers(2, 9))
    @settings(max_examples=100, deadline=None)
    def test_scale_free(self, rows, factor):
        """Does scaling every cell leave all rates unchanged?"""

        cm = np.array(rows)
        if cm.sum() == 0:
            cm[0, 0] = 1
        base, scaled = compute_metrics(cm), compute_metrics(cm * factor)
        np.testing.assert_allclose(scaled.recall, base.recall, atol=1e-12)
        np.testing.assert_allclose(scaled.precision, base.precision, atol=1e-12)
        np.testing.assert_allclose(scaled.f1, base.f1, atol=1e-12)
        self.assertAlmostEqual(scaled.ua, base.ua, delta=1e-12)
        self.assertAlmostEqual(scaled.wa, base.wa, delta=1e-12)
        for rate in np.concatenate([base.precision, base.recall, base.f1, [base.ua, base.wa]]):
            self.assertTrue(0.0 <= rate <= 1.0)

    def test_errors(self):
        """Are empty, non-square and negative matrices rejected?"""

        with self.assertRaises(ProtocolError):
            compute_metrics(np.zeros((5, 5)))
        with self.assertRaises(ParameterError):
            compute_metrics(np.ones((2, 3)))
        with self.assertRaises(ParameterError):
            compute_metrics(np.array([[1, -1], [0, 1]]))

    def test_fold_mean(self):
        """Is the fold mean the arithmetic mean of fold rates to 1e-12?"""

        rng = np.random.default_rng(4)
        reports = [compute_metrics(rng.integers(1, 6, (5, 5))) for _ in range(5)]
        mean = fold_mean(reports)
        self.assertAlmostEqual(mean["ua"], sum(r.ua for r in reports) / 5, delta=1e-12)
        self.assertAlmostEqual(mean["wa"], sum(r.wa for r in reports) / 5, delta=1e-12)
        self.assertAlmostEqual(mean["macro_f1"], sum(r.macro_f1 for r in reports) / 5, delta=1e-12)
        with self.assertRaises(ProtocolError):
            fold_mean([])
