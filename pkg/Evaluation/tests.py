import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import gammaln

from Classifier.config import ModelConfig
from Classifier.network import predict_scores
from Classifier.params import init_params
from Evaluation.groups import group_mean_scores, mean_scores_by_group
from Evaluation.metrics import (
    ConfusionCounts, classification_metrics, confusion_counts, metric_fractions, summarise_folds,
)
from Evaluation.significance import betai, paired_ttest
from Master.validators import ContractViolation, EmptyGroup


def t_density(x, df):
    log_norm = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(log_norm - (df + 1) / 2 * math.log1p(x * x / df))


def quadrature_p(t, df):
    tail, _err = quad(t_density, abs(t), np.inf, args=(df,), epsabs=1e-14, epsrel=1e-12)
    return 2 * tail


def brute_force_metrics(tp, fp, tn, fn):
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    f1 = 2 * precision * sens / (precision + sens) if precision + sens else 0.0
    return {'acc': 100 * ((tp + tn) / n), 'precision': 100 * precision, 'sens': 100 * sens,
            'spec': 100 * spec, 'f1': 100 * f1}


class ConfusionCountsTests(SimpleTestCase):
    def test_two_correct_predictions(self):
        self.assertEqual(confusion_counts([1, 0], [1, 0]), ConfusionCounts(tp=1, fp=0, tn=1, fn=0))

    def test_all_negative_classifier(self):
        counts = confusion_counts([0] * 303 + [1] * 59, [0] * 362)
        self.assertEqual((counts.tn, counts.fn, counts.tp, counts.fp), (303, 59, 0, 0))

    def test_matches_per_element_count(self):
        rng = np.random.default_rng(0)
        labels, preds = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
        expected = {'tp': 0, 'fp': 0, 'tn': 0, 'fn': 0}
        for y, p in zip(labels, preds):
            key = ('t' if y == p else 'f') + ('p' if p == 1 else 'n')
            expected[key] += 1
        self.assertEqual(confusion_counts(labels, preds), ConfusionCounts(**expected))
        self.assertEqual(confusion_counts(labels, preds).total, 50)

    def test_length_mismatch_is_rejected(self):
        with self.assertRaises(ContractViolation):
            confusion_counts([1, 0, 1], [1, 0])


class ClassificationMetricsTests(SimpleTestCase):
    def test_degenerate_classifier_row(self):
        record = classification_metrics(ConfusionCounts(tp=0, fp=0, tn=303, fn=59))
        self.assertEqual((record.sens, record.f1, record.precision, record.spec, record.acc),
                         (0.0, 0.0, 0.0, 100.0, 83.7))

    def test_perfect_classifier(self):
        record = classification_metrics(ConfusionCounts(tp=7, fp=0, tn=9, fn=0))
        self.assertEqual(record.as_row(), [100.0] * 5)

    def test_hand_computed_table(self):
        record = classification_metrics(ConfusionCounts(tp=3, fp=1, tn=4, fn=2))
        self.assertEqual((record.acc, record.precision, record.sens, record.spec, record.f1),
                         (70.0, 75.0, 60.0, 80.0, 66.67))
        self.assertEqual(record.balanced_acc, 70.0)

    def test_random_tables_match_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            tp, fp, tn, fn = (int(v) for v in rng.integers(0, 40, 4))
            if tp + fp + tn + fn == 0:
                continue
            record = classification_metrics(ConfusionCounts(tp, fp, tn, fn))
            for name, value in brute_force_metrics(tp, fp, tn, fn).items():
                self.assertAlmostEqual(getattr(record, name), round(value, 2), delta=1e-9)
                self.assertTrue(0.0 <= getattr(record, name) <= 100.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_accuracy_is_class_weighted_recall(self, tp, fp, tn, fn):
        counts = ConfusionCounts(tp, fp, tn, fn)
        if counts.total == 0:
            return
        f = metric_fractions(counts)
        self.assertAlmostEqual(f['acc'], (f['sens'] * counts.positives + f['spec'] * counts.negatives) / counts.total,
                               delta=1e-9)

    def test_empty_table_is_rejected(self):
        with self.assertRaises(ContractViolation):
            classification_metrics(ConfusionCounts(0, 0, 0, 0))

    def test_fold_summary_uses_sample_deviation(self):
        records = [classification_metrics(ConfusionCounts(3, 1, 4, 2)),
                   classification_metrics(ConfusionCounts(5, 0, 5, 0))]
        frame, mean, sd = summarise_folds(records)
        self.assertEqual(len(frame), 2)
        self.assertAlmostEqual(mean['acc'], 85.0)
        self.assertAlmostEqual(sd['acc'], np.std([70.0, 100.0], ddof=1))
        _f, _m, single_sd = summarise_folds(records[:1])
        self.assertTrue((single_sd == 0).all())


class PairedTTestTests(SimpleTestCase):
    def test_identical_samples(self):
        result = paired_ttest([80.0, 82.5, 79.0], [80.0, 82.5, 79.0])
        self.assertEqual((result.t, result.p), (0.0, 1.0))

    def test_constant_nonzero_difference(self):
        result = paired_ttest([2.0] * 5, [1.0] * 5)
        self.assertTrue(result.zero_variance)
        self.assertEqual(result.p, 0.0)
        self.assertEqual(result.t, math.inf)

    def test_matches_quadrature_oracle(self):
        diffs = np.array([1.1, 0.9, 1.3, 0.7, 1.0])
        result = paired_ttest(diffs, np.zeros(5))
        expected_t = diffs.mean() / (diffs.std(ddof=1) / math.sqrt(5))
        self.assertAlmostEqual(result.t, expected_t, delta=1e-6)
        self.assertAlmostEqual(result.p, quadrature_p(expected_t, 4), delta=1e-6)
        self.assertTrue(result.significant)

    def test_moderate_statistics_match_quadrature(self):
        rng = np.random.default_rng(2)
        for df in (1, 3, 4, 9, 29):
            a = rng.normal(size=df + 1)
            b = a + rng.normal(0.3, 1.0, size=df + 1)
            result = paired_ttest(a, b)
            self.assertAlmostEqual(result.p, quadrature_p(result.t, df), delta=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=10), st.integers(0, 10 ** 6))
    def test_antisymmetric_and_bounded(self, a, seed):
        a = np.array(a)
        b = a + np.random.default_rng(seed).normal(size=a.size)
        forward, backward = paired_ttest(a, b), paired_ttest(b, a)
        self.assertAlmostEqual(forward.t, -backward.t, delta=1e-9 * max(1.0, abs(forward.t)))
        self.assertAlmostEqual(forward.p, backward.p, delta=1e-12)
        self.assertTrue(0.0 <= forward.p <= 1.0)

    def test_too_short_is_rejected(self):
        with self.assertRaises(ContractViolation):
            paired_ttest([1.0], [2.0])

    def test_incomplete_beta_endpoints_and_symmetry(self):
        self.assertEqual(betai(2.0, 3.0, 0.0), 0.0)
        self.assertEqual(betai(2.0, 3.0, 1.0), 1.0)
        self.assertAlmostEqual(betai(2.5, 1.5, 0.3), 1 - betai(1.5, 2.5, 0.7), delta=1e-13)


class GroupScoreTests(SimpleTestCase):
    def test_single_subject_groups(self):
        report = mean_scores_by_group([0.2, 0.9, 0.6], ['CN', 'AD', 'Asym'])
        self.assertEqual(report.means, {'CN': 0.2, 'AD': 0.9, 'Asym': 0.6})
        self.assertEqual(report.order, ['CN', 'AD', 'Asym'])

    def test_constant_scores(self):
        report = mean_scores_by_group([0.5] * 6, ['CN', 'CN', 'Asym', 'Asym', 'AD', 'AD'])
        self.assertEqual(set(report.means.values()), {0.5})
        self.assertTrue(report.to_frame()['n'].eq(2).all())

    def test_empty_group_is_named(self):
        with self.assertRaisesMessage(EmptyGroup, 'MCI'):
            mean_scores_by_group([0.1, 0.7], ['CN', 'AD'], groups=['CN', 'MCI'])

    def test_ordering_check(self):
        report = mean_scores_by_group([0.1, 0.4, 0.8], ['CN', 'weak', 'strong'])
        self.assertTrue(report.is_ordered(['CN', 'weak', 'strong']))
        self.assertFalse(report.is_ordered(['strong', 'CN']))

    def test_model_scores_are_averaged_per_group(self):
        config = ModelConfig(n_networks=4, n_windows=3, conv_channels=(2,), embed_dim=4, n_blocks=1, dropout=0.0)
        params = init_params(config)
        data = np.tile(np.eye(4), (5, 3, 1, 1)) + np.random.default_rng(3).normal(scale=0.1, size=(5, 3, 4, 4))
        data = 0.5 * (data + np.swapaxes(data, -1, -2))
        tags = ['CN', 'CN', 'Asym', 'Asym', 'Asym']
        report = group_mean_scores(params, config, data, tags)
        scores = predict_scores(data, params, config)
        self.assertAlmostEqual(report.means['Asym'], scores[2:].mean(), delta=1e-15)
        self.assertEqual(report.sizes, {'CN': 2, 'Asym': 3})
