import itertools
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from sequences.data import ABNORMAL, NORMAL
from .exports import read_csv_rows, write_pr_curve, write_projection, write_report
from .services import evaluate_at_threshold, f1_from_precision_recall, pr_curve, prf, project_2d


def brute_force_average_precision(values, positive):
    """AP по всем порогам: шаг полноты, умноженный на точность в этой точке"""
    total = positive.sum()
    previous_recall, ap = 0.0, 0.0
    for threshold in sorted(set(values), reverse=True):
        predicted = values >= threshold
        tp = np.sum(predicted & positive)
        recall = tp / total
        precision = tp / predicted.sum()
        ap += (recall - previous_recall) * precision
        previous_recall = recall
    return ap


class PRFTests(SimpleTestCase):

    def test_published_f1_values(self):
        self.assertAlmostEqual(f1_from_precision_recall(0.955, 0.998), 0.976, delta=0.0005)
        self.assertAlmostEqual(f1_from_precision_recall(0.968, 0.471), 0.634, delta=0.0005)

    def test_counts_and_metrics(self):
        truth = [ABNORMAL] * 8 + [NORMAL] * 5
        preds = [ABNORMAL] * 10 + [NORMAL] * 3
        report = prf(preds, truth)
        self.assertEqual((report.tp, report.fp, report.fn, report.tn), (8, 2, 0, 3))
        self.assertAlmostEqual(report.precision, 0.8)
        self.assertEqual(report.recall, 1.0)
        self.assertAlmostEqual(report.f1, 8 / 9)
        self.assertEqual(report.total, len(truth))

    def test_no_predicted_positives(self):
        report = prf([NORMAL, NORMAL], [ABNORMAL, NORMAL])
        self.assertEqual((report.precision, report.recall, report.f1), (0.0, 0.0, 0.0))

    def test_errors(self):
        with self.assertRaises(ValueError):
            prf([ABNORMAL], [ABNORMAL, NORMAL])
        with self.assertRaises(ValueError):
            prf([ABNORMAL, NORMAL], [NORMAL, NORMAL])

    def test_matches_naive_recount(self):
        rng = np.random.default_rng(0)
        preds = list(rng.random(50) < 0.4)
        truth = list(rng.random(50) < 0.3) + [True]
        preds.append(False)
        report = prf(preds, truth)
        naive = {key: 0 for key in ('tp', 'fp', 'fn', 'tn')}
        for p, t in zip(preds, truth):
            naive['tp' if p and t else 'fp' if p else 'fn' if t else 'tn'] += 1
        self.assertEqual((report.tp, report.fp, report.fn, report.tn),
                         (naive['tp'], naive['fp'], naive['fn'], naive['tn']))

    def test_threshold_rule_is_strict(self):
        report = evaluate_at_threshold([0.2, 0.5, 0.9], [NORMAL, ABNORMAL, ABNORMAL], 0.5)
        self.assertEqual((report.tp, report.fn), (1, 1))
        self.assertEqual(report.threshold, 0.5)


class PRCurveTests(SimpleTestCase):

    def test_perfect_separation(self):
        curve = pr_curve([0.1, 0.2, 0.8, 0.9], [NORMAL, NORMAL, ABNORMAL, ABNORMAL])
        self.assertEqual(curve.average_precision, 1.0)

    def test_equal_scores_give_base_rate(self):
        curve = pr_curve([0.5] * 10, [ABNORMAL] * 3 + [NORMAL] * 7)
        self.assertAlmostEqual(curve.average_precision, 0.3, delta=1e-15)
        self.assertEqual(curve.points, [(1.0, 0.3)])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        values = np.round(rng.random(100), 2)
        positive = rng.random(100) < 0.35
        curve = pr_curve(values, list(positive))
        self.assertAlmostEqual(curve.average_precision, brute_force_average_precision(values, positive), delta=1e-12)

    def test_recall_non_increasing_with_threshold(self):
        rng = np.random.default_rng(2)
        values = rng.random(42)
        truth = list(rng.random(40) < 0.5) + [True, False]
        curve = pr_curve(values, truth)
        self.assertEqual(curve.thresholds, sorted(curve.thresholds))
        self.assertTrue(all(a >= b for a, b in zip(curve.recalls, curve.recalls[1:])))
        self.assertTrue(0.0 <= curve.average_precision <= 1.0)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(3)
        values = rng.random(60)
        truth = list(rng.random(60) < 0.4) + [True]
        values = np.r_[values, 0.5]
        self.assertAlmostEqual(pr_curve(values, truth).average_precision,
                               pr_curve(np.exp(3 * values) - 7, truth).average_precision, delta=1e-12)

    def test_single_class_rejected(self):
        with self.assertRaises(ValueError):
            pr_curve([0.1, 0.2], [NORMAL, NORMAL])


class ProjectionTests(SimpleTestCase):

    def test_collinear_points(self):
        direction = np.array([1.0, -2.0, 0.5])
        reps = [t * direction + 1.0 for t in (-1.0, 0.0, 2.0, 3.5)]
        points = project_2d(reps, [NORMAL] * 4)
        self.assertTrue(all(abs(y) < 1e-8 for _, y, _ in points))

    def test_non_expansive(self):
        reps = np.random.default_rng(4).normal(size=(12, 5))
        points = project_2d(reps, [NORMAL] * 12)
        coords = np.array([(x, y) for x, y, _ in points])
        for i, j in itertools.combinations(range(12), 2):
            self.assertLessEqual(np.linalg.norm(coords[i] - coords[j]), np.linalg.norm(reps[i] - reps[j]) + 1e-9)

    def test_one_dimensional_representations(self):
        points = project_2d([[1.0], [2.0], [4.0]], [NORMAL, NORMAL, ABNORMAL])
        self.assertEqual([y for _, y, _ in points], [0.0, 0.0, 0.0])
        self.assertEqual(points[2][2], ABNORMAL)

    def test_too_few_vectors(self):
        with self.assertRaises(ValueError):
            project_2d([[1.0, 2.0], [3.0, 4.0]], [NORMAL, NORMAL])


class ExportTests(SimpleTestCase):

    def test_csv_and_json_outputs(self):
        curve = pr_curve([0.1, 0.4, 0.35, 0.8], [NORMAL, ABNORMAL, NORMAL, ABNORMAL])
        report = prf([ABNORMAL, NORMAL], [ABNORMAL, NORMAL], threshold=0.3)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            rows = read_csv_rows(write_pr_curve(tmp / 'pr.csv', curve))
            self.assertEqual(list(rows[0]), ['threshold', 'precision', 'recall'])
            self.assertEqual([float(row['threshold']) for row in rows], curve.thresholds)

            points = read_csv_rows(write_projection(tmp / 'proj.csv', [(0.5, -1.0, NORMAL)]))
            self.assertEqual(points, [{'x': '0.5', 'y': '-1.0', 'label': NORMAL}])

            path = write_report(tmp / 'report.json', report, average_precision=1.0)
            self.assertIn('"average_precision": 1.0', path.read_text(encoding='utf-8'))
