import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from Classifier.config import ModelConfig
from Classifier.params import init_params
from Master.validators import ContractViolation, NonFiniteValue, StratificationError
from Numeric.gradcheck import finite_difference_check
from Training.folds import FoldPlan, stratified_kfold
from Training.losses import bce_loss, positive_class_weight
from Training.optim import OptimState, adamw_step, cosine_lr
from Training.trainer import TrainHyperparams, smoothed, train_fold


def separable_cohort(n_per_class=4, n=4, windows=3, seed=0):
    rng = np.random.default_rng(seed)
    data, labels = [], []
    for label, level in ((0, -0.8), (1, 0.8)):
        for _i in range(n_per_class):
            m = np.full((windows, n, n), level) + rng.normal(scale=0.05, size=(windows, n, n))
            m = 0.5 * (m + np.swapaxes(m, 1, 2))
            m[:, np.arange(n), np.arange(n)] = 1.0
            data.append(np.clip(m, -1, 1))
            labels.append(label)
    return np.array(data), np.array(labels)


def tiny_config(**overrides):
    options = dict(n_networks=4, n_windows=3, conv_channels=(4,), embed_dim=8,
                   n_blocks=1, dropout=0.0, seed=0)
    options.update(overrides)
    return ModelConfig(**options)


def adam_oracle(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


class StratifiedKFoldTests(SimpleTestCase):
    def test_balanced_ten_subjects(self):
        labels = np.array([0] * 5 + [1] * 5)
        plan = stratified_kfold(labels, k=5, seed=3)
        for fold in plan.folds:
            self.assertEqual(sorted(labels[fold].tolist()), [0, 1])

    def test_imbalanced_cohort_positive_counts(self):
        labels = np.array([0] * 303 + [1] * 59)
        plan = stratified_kfold(labels, k=5, seed=0)
        self.assertLessEqual({int(labels[f].sum()) for f in plan.folds}, {11, 12})
        self.assertEqual(plan.n_subjects, 362)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 7), st.lists(st.integers(0, 2), min_size=30, max_size=80), st.integers(0, 10 ** 6))
    def test_partition_and_stratification(self, k, raw, seed):
        labels = np.array(raw)
        _classes, counts = np.unique(labels, return_counts=True)
        if counts.min() < k:
            with self.assertRaises(StratificationError):
                stratified_kfold(labels, k, seed)
            return
        plan = stratified_kfold(labels, k, seed)
        everything = np.concatenate(plan.folds)
        self.assertEqual(sorted(everything.tolist()), list(range(labels.size)))
        for cls in np.unique(labels):
            per_fold = [int(np.sum(labels[f] == cls)) for f in plan.folds]
            self.assertLessEqual(max(per_fold) - min(per_fold), 1)

    def test_deterministic_given_seed(self):
        labels = np.array([0, 1] * 10)
        a, b = stratified_kfold(labels, 4, seed=9), stratified_kfold(labels, 4, seed=9)
        for x, y in zip(a.folds, b.folds):
            np.testing.assert_array_equal(x, y)

    def test_small_class_is_named(self):
        with self.assertRaisesMessage(StratificationError, 'Class 1'):
            stratified_kfold([0, 0, 0, 1, 1], k=3)

    def test_split_and_dict_round_trip(self):
        plan = stratified_kfold(np.array([0] * 6 + [1] * 6), k=3, seed=1)
        train, val = plan.split(0)
        self.assertEqual(len(train) + len(val), 12)
        self.assertFalse(set(train) & set(val))
        again = FoldPlan.from_dict(plan.to_dict())
        for x, y in zip(plan.folds, again.folds):
            np.testing.assert_array_equal(x, y)


class CosineScheduleTests(SimpleTestCase):
    def test_endpoints_and_midpoint(self):
        self.assertEqual(cosine_lr(0, 300, 0.001, 0.0), 0.001)
        self.assertAlmostEqual(cosine_lr(300, 300, 0.001, 1e-5), 1e-5, delta=1e-18)
        self.assertAlmostEqual(cosine_lr(150, 300, 0.001, 1e-5), (0.001 + 1e-5) / 2, delta=1e-15)

    def test_monotone_nonincreasing(self):
        values = [cosine_lr(e, 40, 0.01, 0.001) for e in range(41)]
        self.assertTrue(all(a >= b for a, b in zip(values, values[1:])))

    def test_epoch_past_schedule_is_rejected(self):
        with self.assertRaises(ContractViolation):
            cosine_lr(11, 10)


class AdamWTests(SimpleTestCase):
    def setUp(self):
        self.params = init_params(tiny_config())

    def test_zero_gradient_decays_exactly(self):
        grads = {name: np.zeros_like(value) for name, value in self.params.items()}
        state = OptimState.for_params(self.params)
        updated, _state = adamw_step(self.params, grads, state, lr=0.001, weight_decay=0.05)
        for name, value in self.params.items():
            np.testing.assert_array_equal(updated[name], value * (1 - 0.001 * 0.05))

    def test_fixed_point_without_decay_or_gradient(self):
        grads = {name: np.zeros_like(value) for name, value in self.params.items()}
        updated, state = adamw_step(self.params, grads, OptimState.for_params(self.params), 0.01, 0.0)
        for name, value in self.params.items():
            np.testing.assert_array_equal(updated[name], value)
        self.assertEqual(state.step, 1)

    def test_scalar_step_matches_hand_computation(self):
        params = self.params.replace({'head.bias': np.array([0.5])})
        grads = {'head.bias': np.array([0.2])}
        updated, _state = adamw_step(params, grads, OptimState.for_params(params), lr=0.001, weight_decay=0.05)
        m_hat = (0.1 * 0.2) / 0.1
        v_hat = (0.001 * 0.04) / 0.001
        expected = 0.5 * (1 - 0.001 * 0.05) - 0.001 * m_hat / (math.sqrt(v_hat) + 1e-8)
        self.assertAlmostEqual(float(updated['head.bias'][0]), expected, delta=1e-12)

    def test_without_decay_reduces_to_adam(self):
        params = self.params.replace({'head.bias': np.array([0.3])})
        state = OptimState.for_params(params)
        sequence = [0.5, -0.2, 0.1, 0.4, -0.3]
        for g in sequence:
            params, state = adamw_step(params, {'head.bias': np.array([g])}, state, 0.01, 0.0)
        self.assertAlmostEqual(float(params['head.bias'][0]), adam_oracle(0.3, sequence, 0.01), delta=1e-12)

    def test_non_finite_gradient_names_the_parameter(self):
        with self.assertRaisesMessage(NonFiniteValue, 'head.weight'):
            adamw_step(self.params, {'head.weight': np.full((8, 1), np.nan)},
                       OptimState.for_params(self.params), 0.001)


class BceLossTests(SimpleTestCase):
    def test_zero_logit(self):
        self.assertAlmostEqual(float(bce_loss(np.array([0.0]), [1]).data), math.log(2), delta=1e-12)

    def test_saturated_correct_prediction(self):
        self.assertLess(float(bce_loss(np.array([50.0]), [1]).data), 1e-20)

    def test_gradient_is_sigmoid_minus_label(self):
        for z in (-3.0, 0.5, 4.0):
            for y in (0.0, 1.0):
                report = finite_difference_check(
                    lambda graph, leaves: bce_loss(leaves['z'], [y]), {'z': np.array([z])})
                self.assertLess(report.max_error, 1e-6)

    def test_label_outside_binary_is_rejected(self):
        with self.assertRaises(ContractViolation):
            bce_loss(np.array([0.0]), [2])

    def test_positive_weight_balances_classes(self):
        self.assertEqual(positive_class_weight([0, 0, 0, 1]), 3.0)


class TrainFoldTests(SimpleTestCase):
    def test_separable_subjects_are_fit(self):
        data, labels = separable_cohort()
        hyper = TrainHyperparams(epochs=50, lr=0.03, batch_size=2, log_every=0)
        _params, history = train_fold(data, labels, data, labels, tiny_config(), hyper, seed=0)
        self.assertEqual(len(history), 50)
        self.assertLess(history.train_loss[-1], 0.05)

    def test_same_seed_same_history(self):
        data, labels = separable_cohort(seed=1)
        hyper = TrainHyperparams(epochs=4, batch_size=3, log_every=0)
        config = tiny_config(dropout=0.2)
        _a, first = train_fold(data, labels, data[:4], labels[:4], config, hyper, seed=7)
        _b, second = train_fold(data, labels, data[:4], labels[:4], config, hyper, seed=7)
        self.assertEqual(first.train_loss, second.train_loss)
        self.assertEqual(first.val_metrics, second.val_metrics)

    def test_learning_rate_column_is_the_schedule(self):
        data, labels = separable_cohort(n_per_class=2)
        hyper = TrainHyperparams(epochs=6, lr=0.002, lr_min=1e-4, log_every=0)
        _params, history = train_fold(data, labels, data, labels, tiny_config(), hyper)
        self.assertEqual(history.lr, [cosine_lr(e, 6, 0.002, 1e-4) for e in range(6)])
        self.assertEqual(list(history.to_frame().columns[:4]), ['epoch', 'lr', 'train_loss', 'val_loss'])

    def test_early_loss_decreases_when_smoothed(self):
        data, labels = separable_cohort(seed=2)
        hyper = TrainHyperparams(epochs=10, batch_size=8, log_every=0)
        _params, history = train_fold(data, labels, data, labels, tiny_config(), hyper, seed=3)
        means = smoothed(history.train_loss, 3)
        self.assertTrue(np.all(np.diff(means) <= 1e-12))

    def test_keep_best_records_the_epoch(self):
        data, labels = separable_cohort(n_per_class=2)
        hyper = TrainHyperparams(epochs=3, keep_best=True, log_every=0)
        _params, history = train_fold(data, labels, data, labels, tiny_config(), hyper)
        self.assertEqual(history.best_epoch, int(np.argmin(history.val_loss)))

    def test_empty_split_is_rejected(self):
        data, labels = separable_cohort(n_per_class=2)
        with self.assertRaises(ContractViolation):
            train_fold(data, labels, data[:0], labels[:0], tiny_config(), TrainHyperparams(epochs=1))
