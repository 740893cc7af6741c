import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from Connectivity.formats import read_timecourse
from Connectivity.partition import DomainPartition
from Connectivity.windowing import windowed_correlation
from Master.validators import ContractViolation, InfeasibleEffect
from Synthetic.cohort import (
    CohortConfig, desk_preset, full_preset, generate_cohort, group_correlation, read_labels,
)
from Synthetic.effects import (
    block_features, cohort_static_fnc, permutation_test, subgroup_effects, verify_planted_effect,
)


def small_config(**overrides):
    options = dict(n_negative=6, n_positive=6, n_timepoints=40)
    options.update(overrides)
    return desk_preset(**options)


class CohortConfigTests(SimpleTestCase):
    def test_desk_preset_shape(self):
        config = desk_preset()
        self.assertEqual((config.n_subjects, config.n_networks, config.n_timepoints), (120, 16, 60))
        self.assertEqual(len(config.planted_blocks), 2)
        self.assertTrue(config.switching)

    def test_full_preset_shape(self):
        config = full_preset()
        self.assertEqual((config.n_networks, config.partition.n_domains, config.n_timepoints), (53, 7, 255))

    def test_unknown_planted_domain_is_rejected(self):
        with self.assertRaises(ContractViolation):
            desk_preset(planted_blocks=(('CC', 'DM'),))

    def test_effect_outside_unit_interval_is_rejected(self):
        with self.assertRaises(ContractViolation):
            desk_preset(effect=1.5)

    def test_dict_round_trip(self):
        config = small_config(subgroups=(('weak', 0.3), ('strong', 1.0)))
        self.assertEqual(CohortConfig.from_dict(config.to_dict()), config)

    def test_subgroups_split_the_positive_group(self):
        config = small_config(n_positive=7, subgroups=(('weak', 0.3), ('strong', 1.0)))
        tags = [tag for tag, _m in config.positive_subgroups()]
        self.assertEqual(len(tags), 7)
        self.assertEqual(set(tags), {'weak', 'strong'})
        self.assertLessEqual(abs(tags.count('weak') - tags.count('strong')), 1)


class GroupCorrelationTests(SimpleTestCase):
    def test_repaired_matrices_are_valid(self):
        for config in (desk_preset(), full_preset(), desk_preset(effect=0.6)):
            for multiplier in (0.0, 1.0):
                sigma = group_correlation(config, multiplier)
                self.assertGreaterEqual(np.linalg.eigvalsh(sigma).min(), -1e-10)
                np.testing.assert_allclose(np.diag(sigma), 1.0, atol=1e-12)
                np.testing.assert_array_equal(sigma, sigma.T)
                self.assertTrue((np.abs(sigma) <= 1.0 + 1e-12).all())

    def test_base_structure(self):
        sigma = group_correlation(desk_preset(planted_blocks=()), 1.0)
        self.assertAlmostEqual(sigma[0, 1], 0.2, delta=1e-12)
        self.assertAlmostEqual(sigma[0, 5], 0.05, delta=1e-12)

    def test_effect_is_added_inside_planted_blocks(self):
        config = desk_preset()
        cc = config.partition.slice_of('CC')
        sigma = group_correlation(config, 1.0)
        self.assertAlmostEqual(sigma[cc][0, 1], 0.5, delta=1e-12)

    def test_out_of_range_correlation_is_infeasible(self):
        with self.assertRaisesMessage(InfeasibleEffect, 'smaller effect'):
            group_correlation(desk_preset(effect=0.96), 1.0)

    def test_large_repair_is_infeasible(self):
        config = CohortConfig(partition=DomainPartition.from_pairs([('X', 8), ('Y', 8)]),
                              planted_blocks=(('X', 'Y'),), effect=1.0, across_domain=0.0,
                              switching=False)
        with self.assertRaises(InfeasibleEffect):
            generate_cohort(config, seed=0)


class GenerateCohortTests(SimpleTestCase):
    def test_same_seed_is_bit_identical(self):
        config = small_config()
        np.testing.assert_array_equal(generate_cohort(config, 4).values(), generate_cohort(config, 4).values())

    def test_different_seed_differs(self):
        config = small_config()
        self.assertFalse(np.array_equal(generate_cohort(config, 1).values(), generate_cohort(config, 2).values()))

    def test_labels_and_tags(self):
        cohort = generate_cohort(small_config(), seed=0)
        self.assertEqual(cohort.labels.tolist(), [0] * 6 + [1] * 6)
        self.assertEqual(set(cohort.tags), {'CN', 'Asym'})
        self.assertEqual(cohort.values().shape, (12, 40, 16))

    def test_windowed_connectivity_of_generated_subjects(self):
        cohort = generate_cohort(small_config(), seed=5)
        for subject in cohort.subjects[:4]:
            windows = windowed_correlation(subject.timecourse).windows
            self.assertEqual(windows.shape, (31, 16, 16))
            np.testing.assert_array_equal(windows, np.swapaxes(windows, 1, 2))
            np.testing.assert_array_equal(windows[:, np.arange(16), np.arange(16)], 1.0)
            self.assertTrue((np.abs(windows) <= 1.0).all())

    def test_written_files_round_trip(self):
        cohort = generate_cohort(small_config(n_negative=2, n_positive=2), seed=3)
        with tempfile.TemporaryDirectory() as tmp:
            paths = cohort.write(tmp)
            self.assertEqual(len(paths), 5)
            frame = read_labels(Path(tmp) / 'labels.csv')
            self.assertEqual(list(frame.columns), ['subject_id', 'group', 'subgroup', 'seed'])
            self.assertEqual(frame['group'].tolist(), [0, 0, 1, 1])
            again = read_timecourse(Path(tmp) / 'timecourses' / 'sub0001.csv')
            np.testing.assert_array_equal(again.values, cohort.subjects[0].timecourse.values)
            self.assertEqual(again.network_names[:2], ('SC1', 'SC2'))


class PlantedEffectTests(SimpleTestCase):
    def test_planted_block_difference_is_recovered(self):
        config = desk_preset(n_negative=30, n_positive=30, n_timepoints=200,
                             planted_blocks=(('CC', 'CC'),), switching=False)
        table = verify_planted_effect(generate_cohort(config, seed=11))
        self.assertEqual(table.effects.shape, (4, 4))
        self.assertAlmostEqual(table.effect('CC', 'CC'), 0.3, delta=0.08)
        self.assertEqual(table.largest_block(), ('CC', 'CC'))

    def test_null_cohort_effects_are_small(self):
        config = desk_preset(n_negative=30, n_positive=30, n_timepoints=100, effect=0.0, switching=False)
        table = verify_planted_effect(generate_cohort(config, seed=12))
        self.assertTrue((np.abs(table.effects) <= 3 * table.standard_errors).all())

    def test_graded_subgroups_are_ordered(self):
        config = desk_preset(n_negative=20, n_positive=40, n_timepoints=200, switching=False,
                             planted_blocks=(('CC', 'CC'),), subgroups=(('weak', 0.3), ('strong', 1.0)))
        effects = subgroup_effects(generate_cohort(config, seed=13), ('CC', 'CC'))
        self.assertLess(0.0, effects['weak'])
        self.assertLess(effects['weak'], effects['strong'])

    def test_block_features_oracle(self):
        partition = DomainPartition.from_pairs([('A', 2), ('B', 3)])
        fnc = np.random.default_rng(0).random((5, 5))
        features = block_features(fnc, partition)
        self.assertAlmostEqual(features[0, 0], fnc[0, 1] / 2 + fnc[1, 0] / 2, delta=1e-15)
        self.assertAlmostEqual(features[0, 1], fnc[0:2, 2:5].mean(), delta=1e-15)


class PermutationTestTests(SimpleTestCase):
    def test_null_cohorts_rarely_reach_significance(self):
        flagged, total = 0, 0
        for seed in range(4):
            config = desk_preset(n_negative=20, n_positive=20, n_timepoints=60, effect=0.0, switching=False)
            cohort = generate_cohort(config, seed=seed)
            features = block_features(cohort_static_fnc(cohort), config.partition)
            p = permutation_test(features, cohort.labels, n_permutations=200, seed=seed)
            upper = p[np.triu_indices(4)]
            flagged += int((upper < 0.01).sum())
            total += upper.size
        self.assertLessEqual(flagged / total, 0.1)

    def test_planted_block_is_significant(self):
        config = desk_preset(n_negative=20, n_positive=20, n_timepoints=100, switching=False)
        cohort = generate_cohort(config, seed=21)
        features = block_features(cohort_static_fnc(cohort), config.partition)
        p = permutation_test(features, cohort.labels, n_permutations=200, seed=0)
        names = config.partition.names
        self.assertLess(p[names.index('CC'), names.index('CC')], 0.01)
        self.assertLess(p[names.index('SM'), names.index('VS')], 0.01)
        self.assertGreater(p.min(), 0.0)
