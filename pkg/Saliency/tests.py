import numpy as np
from django.test import SimpleTestCase
from scipy.signal import correlate2d

from Classifier.config import ModelConfig
from Classifier.network import model_forward
from Classifier.params import init_params
from Connectivity.partition import DomainPartition
from Master.seed_generator import derive_seed
from Master.validators import ContractViolation, EmptyGroup
from Numeric.tensor import ComputationGraph, reverse_grad
from Saliency.cam import (
    _target_score, finalise_map, gradcam_raw, layercam, layercam_raw, random_map, stem_gradients,
    subject_saliency,
)
from Saliency.fidelity import confidence_fidelity, mask_entries, random_fidelity, top_entries
from Saliency.maps import domain_aggregate, group_mean_maps, threshold_difference_map


def toy_config(**overrides):
    options = dict(n_networks=6, n_windows=4, conv_channels=(2, 2), embed_dim=4,
                   n_blocks=1, n_heads=1, dropout=0.0, seed=2)
    options.update(overrides)
    return ModelConfig(**options)


def random_dfnc(rng, *lead, n=6):
    a = rng.normal(size=lead + (n, n))
    m = np.tanh(0.5 * (a + np.swapaxes(a, -1, -2)))
    idx = np.arange(n)
    m[..., idx, idx] = 1.0
    return m


def block_partition():
    return DomainPartition(names=('A', 'B', 'C'), sizes=(2, 1, 3))


class LayerCamTests(SimpleTestCase):
    def test_zero_head_gives_flagged_zero_map(self):
        config = toy_config()
        params = init_params(config)
        params = params.replace({'head.weight': np.zeros_like(params['head.weight'])})
        data = random_dfnc(np.random.default_rng(0), 4)
        with self.assertLogs('Saliency.cam', level='WARNING'):
            cam = layercam(params, config, data)
        self.assertTrue(cam.all_zero)
        np.testing.assert_array_equal(cam.values, np.zeros((6, 6)))

    def test_raw_map_closed_form(self):
        acts = np.array([[[[1.0, 2.0], [0.0, 3.0]], [[2.0, 1.0], [1.0, 0.0]]]])
        grads = np.array([[[[0.5, -1.0], [2.0, 1.0]], [[-0.5, 0.25], [1.0, 3.0]]]])
        expected = np.array([[0.5, 0.0 + 3.0], [0.25, 1.0]])
        np.testing.assert_allclose(layercam_raw(acts, grads), expected, atol=1e-15)

    def test_gradcam_uses_channel_mean_gradient(self):
        acts = np.ones((1, 2, 2, 2))
        grads = np.zeros((1, 2, 2, 2))
        grads[..., 0] = 1.0
        grads[..., 1] = -3.0
        np.testing.assert_array_equal(gradcam_raw(acts, grads), np.zeros((2, 2)))
        grads[..., 1] = 0.5
        np.testing.assert_allclose(gradcam_raw(acts, grads), np.full((2, 2), 1.5))

    def test_single_linear_layer_matches_hand_convolution(self):
        config = toy_config(conv_channels=(1,))
        rng = np.random.default_rng(1)
        kernel = rng.uniform(0.1, 1.0, size=(3, 3, 1, 1))
        params = init_params(config).replace({'conv0.kernel': kernel})
        data = rng.uniform(0.0, 1.0, size=(4, 6, 6))
        data = 0.5 * (data + np.swapaxes(data, 1, 2))
        acts, grads, targets = stem_gradients(params, config, data)
        for w in range(4):
            np.testing.assert_allclose(acts[0, w, ..., 0], correlate2d(data[w], kernel[..., 0, 0], mode='same'),
                                       atol=1e-12)
        expected = finalise_map(
            (np.maximum(grads[0, ..., 0], 0.0) * acts[0, ..., 0]).mean(axis=0), 6, target=int(targets[0]),
        )
        cam = subject_saliency(params, config, data)[0]
        np.testing.assert_allclose(cam.values, expected.values, atol=1e-14)

    def test_activation_gradients_sum_to_bias_gradient(self):
        config = toy_config()
        params = init_params(config)
        data = random_dfnc(np.random.default_rng(2), 3, 4)
        targets = np.array([1, 0, 1])
        _acts, grads, _used = stem_gradients(params, config, data, targets)
        graph = ComputationGraph()
        result = model_forward(data, params, config, graph=graph)
        bias_grad = reverse_grad(graph, _target_score(result.logits, targets, config))['conv1.bias']
        np.testing.assert_allclose(grads.sum(axis=(0, 1, 2, 3)), bias_grad, rtol=1e-10, atol=1e-14)

    def test_maps_are_nonnegative_symmetric_and_normalised(self):
        config = toy_config()
        params = init_params(config)
        data = random_dfnc(np.random.default_rng(3), 5, 4)
        for method in ('layercam', 'gradcam'):
            for cam in subject_saliency(params, config, data, method=method, batch_size=2):
                self.assertTrue((cam.values >= 0).all())
                np.testing.assert_array_equal(cam.values, cam.values.T)
                self.assertTrue(cam.all_zero or cam.values.max() == 1.0)

    def test_unrelated_head_columns_do_not_change_the_map(self):
        config = toy_config(n_classes=3)
        params = init_params(config)
        data = random_dfnc(np.random.default_rng(4), 4)
        before = layercam(params, config, data, target=0)
        weight = np.array(params['head.weight'])
        bias = np.array(params['head.bias'])
        weight[:, 1:] += np.random.default_rng(5).normal(size=(4, 2))
        bias[1:] += 3.0
        after = layercam(params.replace({'head.weight': weight, 'head.bias': bias}), config, data, target=0)
        np.testing.assert_array_equal(before.values, after.values)

    def test_every_stem_layer_is_selectable(self):
        config = toy_config()
        params = init_params(config)
        data = random_dfnc(np.random.default_rng(6), 4)
        self.assertEqual(layercam(params, config, data, layer=0).values.shape, (6, 6))
        with self.assertRaises(ContractViolation):
            layercam(params, config, data, layer=2)

    def test_smaller_maps_are_resized(self):
        cam = finalise_map(np.arange(9.0).reshape(3, 3), 6)
        self.assertEqual(cam.values.shape, (6, 6))
        np.testing.assert_array_equal(cam.values, cam.values.T)
        self.assertEqual(cam.values.max(), 1.0)


class ConfidenceFidelityTests(SimpleTestCase):
    def setUp(self):
        self.config = toy_config()
        self.params = init_params(self.config)
        self.data = random_dfnc(np.random.default_rng(7), 3, 4)

    def test_vanishing_fraction_drops_nothing(self):
        saliency = np.random.default_rng(8).random((6, 6))
        result = confidence_fidelity(self.params, self.config, self.data, saliency, fractions=(0.01,))
        self.assertEqual(result.mean_drop, 0.0)

    def test_fraction_outside_unit_interval_is_rejected(self):
        for fraction in (0.0, 1.5):
            with self.assertRaises(ContractViolation):
                confidence_fidelity(self.params, self.config, self.data, np.ones((6, 6)), fractions=(fraction,))

    def test_saliency_extent_must_match(self):
        with self.assertRaises(ContractViolation):
            confidence_fidelity(self.params, self.config, self.data, np.ones((5, 5)))

    def test_drop_matches_manual_masking(self):
        saliency = np.random.default_rng(9).random((6, 6))
        saliency = saliency + saliency.T
        result = confidence_fidelity(self.params, self.config, self.data, saliency, fractions=(0.2,), target=1)
        rows, cols = top_entries(saliency, 0.2)
        self.assertEqual(rows.size, 3)
        masked = mask_entries(self.data, rows, cols)
        np.testing.assert_array_equal(masked, np.swapaxes(masked, -1, -2))
        base = model_forward(self.data, self.params, self.config).scores.mean()
        after = model_forward(masked, self.params, self.config).scores.mean()
        self.assertAlmostEqual(result.mean_drop, base - after, delta=1e-15)

    def test_uniform_saliency_is_permutation_symmetric(self):
        uniform = np.full((6, 6), 0.5)
        perm = np.random.default_rng(10).permutation(6)
        first = confidence_fidelity(self.params, self.config, self.data, uniform)
        second = confidence_fidelity(self.params, self.config, self.data, uniform[np.ix_(perm, perm)])
        self.assertEqual(first.drops, second.drops)

    def test_random_baseline_is_deterministic(self):
        a = random_fidelity(self.params, self.config, self.data, seed=3, n_seeds=3)
        b = random_fidelity(self.params, self.config, self.data, seed=3, n_seeds=3)
        self.assertEqual(a, b)

    def test_random_baseline_scores_negative_targets_on_class_zero(self):
        on_one = random_fidelity(self.params, self.config, self.data, targets=1, seed=3, n_seeds=4)
        on_zero = random_fidelity(self.params, self.config, self.data, targets=[0, 0, 0], seed=3, n_seeds=4)
        self.assertAlmostEqual(on_zero, -on_one, delta=1e-12)

    def test_random_baseline_uses_each_subject_target(self):
        targets = [0, 1, 0]
        expected = []
        for i in range(4):
            saliency = random_map(6, derive_seed(3, 'random-map', i))
            expected.append(np.mean([
                confidence_fidelity(self.params, self.config, self.data[s], saliency, target=t).mean_drop
                for s, t in enumerate(targets)
            ]))
        result = random_fidelity(self.params, self.config, self.data, targets=targets, seed=3, n_seeds=4)
        self.assertAlmostEqual(result, float(np.mean(expected)), delta=1e-12)


class DomainAggregateTests(SimpleTestCase):
    def test_constant_map(self):
        result = domain_aggregate(np.full((6, 6), 0.3), block_partition())
        np.testing.assert_allclose(result.values, np.full((3, 3), 0.3), atol=1e-15)
        self.assertEqual(result.names, ('A', 'B', 'C'))

    def test_block_indicator(self):
        matrix = np.zeros((6, 6))
        matrix[0:2, 3:6] = 1.0
        expected = np.zeros((3, 3))
        expected[0, 2] = 1.0
        np.testing.assert_array_equal(domain_aggregate(matrix, block_partition()).values, expected)

    def test_matches_scalar_loop(self):
        matrix = np.random.default_rng(11).random((6, 6))
        partition = block_partition()
        labels = partition.labels()
        result = domain_aggregate(matrix, partition).values
        for i, a in enumerate(partition.names):
            for j, b in enumerate(partition.names):
                cells = [matrix[r, c] for r in range(6) for c in range(6) if labels[r] == a and labels[c] == b]
                self.assertAlmostEqual(result[i, j], sum(cells) / len(cells), delta=1e-12)

    def test_partition_mismatch_is_rejected(self):
        with self.assertRaises(ContractViolation):
            domain_aggregate(np.ones((5, 5)), block_partition())


class DifferenceMapTests(SimpleTestCase):
    def test_identical_sets_mask_everything(self):
        maps = [np.random.default_rng(12).random((4, 4))]
        result = threshold_difference_map(maps, maps)
        self.assertFalse(result.mask.any())
        np.testing.assert_array_equal(result.retained, np.zeros((4, 4)))

    def test_zero_threshold_keeps_everything(self):
        rng = np.random.default_rng(13)
        result = threshold_difference_map([rng.random((4, 4))], [rng.random((4, 4))], threshold=0.0)
        self.assertTrue(result.mask.all())

    def test_planted_block_is_recovered(self):
        rng = np.random.default_rng(14)
        block = np.zeros((6, 6), dtype=bool)
        block[0:2, 3:6] = block[3:6, 0:2] = True
        maps_a = [block + rng.uniform(0.0, 0.1, size=(6, 6)) for _i in range(5)]
        maps_b = [rng.uniform(0.0, 0.1, size=(6, 6)) for _i in range(5)]
        result = threshold_difference_map(maps_a, maps_b, threshold=0.7)
        np.testing.assert_array_equal(result.mask, block)
        self.assertTrue((np.abs(result.values[result.mask]) >= 0.7).all())

    def test_empty_side_is_named(self):
        with self.assertRaisesMessage(EmptyGroup, 'Asym'):
            threshold_difference_map([np.ones((3, 3))], [], names=('CN', 'Asym'))

    def test_group_means(self):
        maps = [np.full((2, 2), v) for v in (0.0, 1.0, 0.5)]
        means = group_mean_maps(maps, ['CN', 'Asym', 'CN'])
        np.testing.assert_array_equal(means['CN'], np.full((2, 2), 0.25))
        np.testing.assert_array_equal(means['Asym'], np.ones((2, 2)))
