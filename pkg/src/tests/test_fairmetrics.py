import unittest
import sys
import os
from fractions import Fraction

import numpy as np

# Add the parent directory to the path so we can import the fairstitch modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from fairstitch.errors import ContractError, DegenerateSplitError, EmptyGroupError
from fairstitch.fairloss import ConstraintKind
from fairstitch.fairmetrics import (
    MetricSettings,
    MetricsReport,
    abroca,
    ae_diff,
    af_score,
    auc,
    bacc,
    confusion_by_group,
    eo_diff,
    metrics_report,
    worst_accuracy,
)

# p thresholded at 0.5 gives yhat=[1,0,0,1,1,0]
P6 = np.array([0.6, 0.4, 0.4, 0.6, 0.6, 0.4])
Y6 = np.array([1, 1, 0, 1, 0, 0])
A6 = np.array([1, 1, 1, 0, 0, 0])

# (dataset, method, kind, bacc, fairness value, printed AF)
RESULT_TABLE = [
    ("celeba", "fdr", "eo", 0.876, 0.110, 0.766),
    ("celeba", "tfs", "eo", 0.874, 0.081, 0.793),
    ("celeba", "fdr", "ae", 0.883, 0.008, 0.875),
    ("celeba", "tfs", "ae", 0.881, 0.0005, 0.880),
    ("celeba", "fdr", "mmf", 0.875, 0.800, 1.675),
    ("celeba", "tfs", "mmf", 0.877, 0.811, 1.688),
    ("utkface", "fdr", "eo", 0.796, 0.062, 0.734),
    ("utkface", "tfs", "eo", 0.793, 0.058, 0.735),
    ("utkface", "fdr", "ae", 0.798, 0.016, 0.782),
    ("utkface", "tfs", "ae", 0.796, 0.0096, 0.7864),
    ("utkface", "fdr", "mmf", 0.797, 0.739, 1.536),
    ("utkface", "tfs", "mmf", 0.797, 0.744, 1.541),
]


def _rates(yhat, y):
    tp = sum(1 for h, t in zip(yhat, y) if h == 1 and t == 1)
    fn = sum(1 for h, t in zip(yhat, y) if h == 0 and t == 1)
    fp = sum(1 for h, t in zip(yhat, y) if h == 1 and t == 0)
    tn = sum(1 for h, t in zip(yhat, y) if h == 0 and t == 0)
    return tp, fn, fp, tn


def _oracle_bacc(yhat, y):
    tp, fn, fp, tn = _rates(yhat, y)
    return (Fraction(tp, tp + fn) + Fraction(tn, tn + fp)) / 2


def _oracle_auc(p, y):
    pos = [s for s, t in zip(p, y) if t == 1]
    neg = [s for s, t in zip(p, y) if t == 0]
    wins = Fraction(0)
    for sp in pos:
        for sn in neg:
            wins += 1 if sp > sn else Fraction(1, 2) if sp == sn else 0
    return wins / (len(pos) * len(neg))


def _split_groups(values, a):
    return [[v for v, g in zip(values, a) if g == group] for group in (0, 1)]


def _oracle_eo(yhat, y, a):
    yh0, yh1 = _split_groups(yhat, a)
    y0, y1 = _split_groups(y, a)
    tp0, fn0, fp0, tn0 = _rates(yh0, y0)
    tp1, fn1, fp1, tn1 = _rates(yh1, y1)
    tpr_gap = abs(Fraction(tp1, tp1 + fn1) - Fraction(tp0, tp0 + fn0))
    fpr_gap = abs(Fraction(fp1, fp1 + tn1) - Fraction(fp0, fp0 + tn0))
    return max(tpr_gap, fpr_gap)


def _oracle_ae(yhat, y, a):
    errors = []
    for yh, yy in zip(_split_groups(yhat, a), _split_groups(y, a)):
        errors.append(Fraction(sum(1 for h, t in zip(yh, yy) if h != t), len(yy)))
    return abs(errors[1] - errors[0])


def _oracle_wa(yhat, y, a):
    accuracies = []
    for cy in (0, 1):
        for ca in (0, 1):
            cell = [(h, t) for h, t, g in zip(yhat, y, a) if t == cy and g == ca]
            accuracies.append(Fraction(sum(1 for h, t in cell if h == t), len(cell)))
    return min(accuracies)


def _roc_vertices(p, y):
    positives = sum(y)
    negatives = len(y) - positives
    points = [(0.0, 0.0)]
    for t in sorted(set(p), reverse=True):
        tp = sum(1 for s, l in zip(p, y) if s >= t and l == 1)
        fp = sum(1 for s, l in zip(p, y) if s >= t and l == 0)
        points.append((fp / negatives, tp / positives))
    return points


def _segment(points, u, v):
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        if x0 <= u and x1 >= v and x1 > x0:
            slope = (y1 - y0) / (x1 - x0)
            return y0 + slope * (u - x0), y0 + slope * (v - x0)
    raise AssertionError("no segment covers the interval")


def _oracle_abroca(p, y, a):
    curves = [_roc_vertices(*_split_groups_pair(p, y, a, g)) for g in (0, 1)]
    breaks = sorted({x for curve in curves for x, _ in curve})
    total = 0.0
    for u, v in zip(breaks, breaks[1:]):
        s0, e0 = _segment(curves[0], u, v)
        s1, e1 = _segment(curves[1], u, v)
        d_start, d_end = s1 - s0, e1 - e0
        if d_start * d_end >= 0:
            total += (v - u) * (abs(d_start) + abs(d_end)) / 2
        else:
            total += (v - u) * (d_start ** 2 + d_end ** 2) / (2 * (abs(d_start) + abs(d_end)))
    return total


def _split_groups_pair(p, y, a, group):
    member = [g == group for g in a]
    return [s for s, m in zip(p, member) if m], [t for t, m in zip(y, member) if m]


def _random_instance(rng, n):
    """Scores on a coarse grid (so ties occur) with every (y, a) cell populated."""
    while True:
        y = rng.integers(0, 2, size=n)
        a = rng.integers(0, 2, size=n)
        if all(((y == cy) & (a == ca)).any() for cy in (0, 1) for ca in (0, 1)):
            return rng.integers(0, 11, size=n) / 10.0, y, a


class TestConfusion(unittest.TestCase):
    def test_worked_batch(self):
        c = confusion_by_group([0.6, 0.4, 0.6, 0.4, 0.6, 0.4], Y6, A6)
        self.assertEqual((c[1].tp, c[1].fn, c[1].fp, c[1].tn), (1, 1, 1, 0))
        self.assertEqual((c[0].tp, c[0].fn, c[0].fp, c[0].tn), (0, 1, 1, 1))
        self.assertEqual(c[0].size + c[1].size, 6)

    def test_perfect_and_extreme_threshold(self):
        c = confusion_by_group(Y6.astype(float), Y6, A6)
        self.assertEqual(c[0].fp + c[0].fn + c[1].fp + c[1].fn, 0)
        c = confusion_by_group(P6, Y6, A6, threshold=1.1)
        self.assertEqual(c[0].tp + c[0].fp + c[1].tp + c[1].fp, 0)

    def test_empty_group(self):
        with self.assertRaises(EmptyGroupError):
            confusion_by_group(P6, Y6, np.ones(6, dtype=int))


class TestMetricExamples(unittest.TestCase):
    def test_bacc(self):
        self.assertEqual(bacc(Y6.astype(float), Y6), 1.0)
        self.assertAlmostEqual(bacc(P6, Y6), 2 / 3, places=15)
        self.assertEqual(bacc(np.ones(6), Y6), 0.5)
        with self.assertRaises(DegenerateSplitError):
            bacc(P6, np.ones(6, dtype=int))

    def test_auc(self):
        self.assertEqual(auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]), 1.0)
        self.assertEqual(auc([0.3, 0.7], [1, 0]), 0.0)
        self.assertEqual(auc([0.5, 0.5], [1, 0]), 0.5)

    def test_eo_diff(self):
        self.assertEqual(eo_diff(P6, Y6, A6), 0.5)
        self.assertEqual(eo_diff(P6, Y6, 1 - A6), 0.5)
        self.assertEqual(eo_diff(P6, Y6, A6, mode="sum"), 1.0)
        with self.assertRaises(ContractError):
            eo_diff(P6, Y6, A6, mode="mean")

    def test_eo_diff_symmetric_groups(self):
        p = np.array([0.7, 0.2, 0.7, 0.2])
        y = np.array([1, 0, 1, 0])
        self.assertEqual(eo_diff(p, y, np.array([1, 1, 0, 0])), 0.0)

    def test_ae_diff(self):
        # one error in each group
        self.assertEqual(ae_diff(P6, Y6, A6), 0.0)
        # group 1 errs on 1/3, group 0 on 2/3
        self.assertAlmostEqual(ae_diff([0.6, 0.4, 0.4, 0.6, 0.6, 0.6], Y6, A6), 1 / 3, places=15)
        self.assertEqual(ae_diff(Y6.astype(float), Y6, A6), 0.0)

    def test_worst_accuracy(self):
        self.assertEqual(worst_accuracy(Y6.astype(float), Y6, A6), 1.0)
        self.assertEqual(worst_accuracy(P6, Y6, A6), 0.5)
        self.assertEqual(worst_accuracy(np.ones(6), Y6, A6), 0.0)


class TestAggregateFairness(unittest.TestCase):
    def test_spot_values(self):
        self.assertAlmostEqual(af_score(0.874, 0.081, "eo"), 0.793, delta=1e-9)
        self.assertAlmostEqual(af_score(0.877, 0.811, "mmf"), 1.688, delta=1e-9)
        self.assertAlmostEqual(af_score(0.796, 0.0096, "ae"), 0.7864, delta=1e-9)

    def test_published_result_table(self):
        for dataset, method, kind, bacc_value, fairness, printed in RESULT_TABLE:
            with self.subTest(dataset=dataset, method=method, kind=kind):
                self.assertLessEqual(abs(af_score(bacc_value, fairness, kind) - printed), 0.001)

    def test_no_constraint(self):
        with self.assertRaises(ContractError):
            af_score(0.9, 0.1, ConstraintKind.NONE)


class TestAbroca(unittest.TestCase):
    def test_identical_groups(self):
        p = np.array([0.1, 0.4, 0.35, 0.8, 0.1, 0.4, 0.35, 0.8])
        y = np.array([0, 0, 1, 1, 0, 0, 1, 1])
        a = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        self.assertEqual(abroca(p, y, a), 0.0)

    def test_separated_against_uninformative(self):
        # group 1 perfectly separated, group 0 all tied
        p = np.array([0.5, 0.5, 0.5, 0.5, 0.1, 0.2, 0.8, 0.9])
        y = np.array([0, 1, 0, 1, 0, 0, 1, 1])
        a = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        grid = 10001
        self.assertAlmostEqual(abroca(p, y, a, grid), 0.5, delta=1.0 / grid)

    def test_grid_too_small(self):
        with self.assertRaises(ContractError):
            abroca(P6, Y6, A6, grid=1)


class TestOracles(unittest.TestCase):
    def test_random_instances(self):
        rng = np.random.default_rng(2024)
        grid = 1001
        for trial in range(1000):
            n = int(rng.integers(8, 41))
            p, y, a = _random_instance(rng, n)
            yhat = [1 if s >= 0.5 else 0 for s in p]
            yl, al = y.tolist(), a.tolist()
            with self.subTest(trial=trial):
                self.assertAlmostEqual(bacc(p, y), float(_oracle_bacc(yhat, yl)), delta=1e-12)
                self.assertAlmostEqual(auc(p, y), float(_oracle_auc(p.tolist(), yl)), delta=1e-12)
                self.assertAlmostEqual(eo_diff(p, y, a), float(_oracle_eo(yhat, yl, al)), delta=1e-12)
                self.assertAlmostEqual(ae_diff(p, y, a), float(_oracle_ae(yhat, yl, al)), delta=1e-12)
                self.assertAlmostEqual(worst_accuracy(p, y, a), float(_oracle_wa(yhat, yl, al)), delta=1e-12)
                self.assertLessEqual(abs(abroca(p, y, a, grid) - _oracle_abroca(p.tolist(), yl, al)), 2.0 / grid)


class TestInvariances(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(77)
        self.instances = [_random_instance(self.rng, int(self.rng.integers(12, 41))) for _ in range(50)]

    @staticmethod
    def _all(p, y, a, threshold=0.5):
        return {
            "bacc": bacc(p, y, threshold),
            "auc": auc(p, y),
            "eo_diff": eo_diff(p, y, a, threshold),
            "ae_diff": ae_diff(p, y, a, threshold),
            "worst_accuracy": worst_accuracy(p, y, a, threshold),
            "abroca": abroca(p, y, a, 1001),
        }

    def _assert_same(self, before, after, trial):
        for name, value in before.items():
            with self.subTest(trial=trial, metric=name):
                self.assertAlmostEqual(after[name], value, delta=1e-12)

    def test_row_permutation(self):
        for trial, (p, y, a) in enumerate(self.instances):
            order = self.rng.permutation(len(p))
            self._assert_same(self._all(p, y, a), self._all(p[order], y[order], a[order]), trial)

    def test_monotone_transform(self):
        # expm1(3p) is strictly increasing and keeps distinct scores distinct; the threshold moves with it
        for trial, (p, y, a) in enumerate(self.instances):
            self._assert_same(self._all(p, y, a), self._all(np.expm1(3.0 * p), y, a, np.expm1(1.5)), trial)

    def test_group_swap(self):
        for trial, (p, y, a) in enumerate(self.instances):
            before = self._all(p, y, a)
            after = self._all(p, y, 1 - a)
            for name in ("eo_diff", "ae_diff", "worst_accuracy", "abroca"):
                with self.subTest(trial=trial, metric=name):
                    self.assertAlmostEqual(after[name], before[name], delta=1e-12)



class TestMetricsReport(unittest.TestCase):
    def test_af_identity_and_serialisation(self):
        rng = np.random.default_rng(8)
        p, y, a = _random_instance(rng, 40)
        for kind in ("eo", "ae", "mmf"):
            report = metrics_report(p, y, a, kind, "test", MetricSettings(abroca_grid=1001))
            self.assertEqual(report.af, af_score(report.bacc, report.fairness_value(), kind))
            self.assertEqual(MetricsReport.from_dict(report.to_dict()), report)
        self.assertIsNone(metrics_report(p, y, a, "none", "test", MetricSettings(abroca_grid=1001)).af)


if __name__ == '__main__':
    unittest.main()
