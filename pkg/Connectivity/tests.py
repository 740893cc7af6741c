import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from Connectivity.formats import (
    read_dfnc, read_timecourse, write_dfnc, write_timecourse_binary, write_timecourse_csv,
)
from Connectivity.matrices import unvectorize_upper, vectorize_upper
from Connectivity.partition import DomainPartition
from Connectivity.windowing import (
    NetworkTimecourse, TaperWeights, static_correlation, taper_weights, window_count,
    windowed_correlation,
)
from Master.validators import ContractViolation


def scalar_weighted_correlation(x, y, weights):
    mx = sum(w * a for w, a in zip(weights, x))
    my = sum(w * b for w, b in zip(weights, y))
    cov = sum(w * (a - mx) * (b - my) for w, a, b in zip(weights, x, y))
    vx = sum(w * (a - mx) ** 2 for w, a in zip(weights, x))
    vy = sum(w * (b - my) ** 2 for w, b in zip(weights, y))
    return cov / np.sqrt(vx * vy)


def convolution_oracle(width, sigma):
    half = int(np.ceil(3 * sigma))
    kernel = [np.exp(-0.5 * (j / sigma) ** 2) for j in range(-half, half + 1)]
    out = []
    for i in range(width):
        # rectangle spans indices 0..width-1
        out.append(sum(kernel[j + half] for j in range(-half, half + 1) if 0 <= i - j < width))
    out = np.array(out)
    return out / out.sum()


class WindowCountTests(SimpleTestCase):
    def test_full_scan_geometry_gives_246_windows(self):
        self.assertEqual(window_count(255, 10, 1), 246)

    def test_single_full_window(self):
        self.assertEqual(window_count(10, 10, 1), 1)

    def test_strided_windows(self):
        self.assertEqual(window_count(20, 10, 2), 6)

    def test_series_shorter_than_window_is_rejected(self):
        with self.assertRaises(ContractViolation):
            window_count(9, 10, 1)

    def test_bad_width_and_step_are_rejected(self):
        with self.assertRaises(ContractViolation):
            window_count(20, 1, 1)
        with self.assertRaises(ContractViolation):
            window_count(20, 10, 0)


class TaperTests(SimpleTestCase):
    def test_zero_sigma_is_rectangular(self):
        np.testing.assert_allclose(taper_weights(10, 0).weights, [0.1] * 10, atol=1e-15)

    def test_gaussian_taper_matches_direct_convolution(self):
        taper = taper_weights(10, 3)
        np.testing.assert_allclose(taper.weights, convolution_oracle(10, 3), atol=1e-12)
        self.assertAlmostEqual(taper.weights.sum(), 1.0, delta=1e-12)
        self.assertTrue(np.all(taper.weights > 0))
        self.assertGreater(taper.weights[4], taper.weights[0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 40), st.floats(0, 10, allow_nan=False))
    def test_taper_is_symmetric(self, width, sigma):
        weights = taper_weights(width, sigma).weights
        np.testing.assert_array_equal(weights, weights[::-1])

    def test_width_below_two_is_rejected(self):
        with self.assertRaises(ContractViolation):
            taper_weights(1, 3)


class WindowedCorrelationTests(SimpleTestCase):
    def test_perfect_anticorrelation(self):
        tc = NetworkTimecourse(np.array([[1.0, 3.0], [2.0, 2.0], [3.0, 1.0]]))
        seq = windowed_correlation(tc, taper_weights(3, 0), step=1)
        self.assertEqual(seq.n_windows, 1)
        self.assertAlmostEqual(seq.windows[0, 0, 1], -1.0, delta=1e-12)

    def test_matches_scalar_loop_oracle(self):
        values = np.random.default_rng(11).normal(size=(40, 5))
        taper = taper_weights(10, 3)
        seq = windowed_correlation(NetworkTimecourse(values), taper, step=1)
        self.assertEqual(seq.n_windows, window_count(40, 10, 1))
        for k in range(seq.n_windows):
            segment = values[k:k + 10]
            for i in range(5):
                for j in range(5):
                    expected = 1.0 if i == j else scalar_weighted_correlation(
                        segment[:, i], segment[:, j], taper.weights)
                    self.assertAlmostEqual(seq.windows[k, i, j], expected, delta=1e-12)

    def test_slices_are_well_formed_correlation_matrices(self):
        values = np.random.default_rng(5).normal(size=(60, 8))
        seq = windowed_correlation(NetworkTimecourse(values), taper_weights(10, 3), step=2)
        self.assertEqual(seq.n_windows, window_count(60, 10, 2))
        for window in seq.windows:
            self.assertLess(np.max(np.abs(window - window.T)), 1e-12)
            np.testing.assert_array_equal(np.diag(window), np.ones(8))
            self.assertTrue(np.all(np.abs(window) <= 1.0))
            self.assertGreater(np.linalg.eigvalsh(window).min(), -1e-8)

    def test_full_length_uniform_window_is_pearson(self):
        values = np.random.default_rng(2).normal(size=(30, 6))
        seq = windowed_correlation(NetworkTimecourse(values), taper_weights(30, 0), step=1)
        np.testing.assert_allclose(seq.windows[0], np.corrcoef(values, rowvar=False), atol=1e-12)
        np.testing.assert_allclose(static_correlation(values), np.corrcoef(values, rowvar=False), atol=1e-12)

    def test_positive_affine_rescaling_is_invisible(self):
        rng = np.random.default_rng(8)
        values = rng.normal(size=(35, 4))
        scaled = values * rng.uniform(0.5, 20, size=4) + rng.normal(scale=10, size=4)
        taper = taper_weights(10, 3)
        a = windowed_correlation(NetworkTimecourse(values), taper).windows
        b = windowed_correlation(NetworkTimecourse(scaled), taper).windows
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_constant_channel_gets_zero_correlations(self):
        values = np.random.default_rng(4).normal(size=(12, 3))
        values[:, 1] = 7.0
        with self.assertLogs('Connectivity.windowing', level='WARNING'):
            seq = windowed_correlation(NetworkTimecourse(values), taper_weights(10, 3))
        for window in seq.windows:
            self.assertEqual(window[1, 1], 1.0)
            self.assertEqual(window[0, 1], 0.0)
            self.assertEqual(window[1, 2], 0.0)

    def test_non_finite_time_course_is_rejected(self):
        values = np.ones((12, 3))
        values[3, 2] = np.nan
        with self.assertRaises(ContractViolation):
            NetworkTimecourse(values)

    def test_window_count_disagreement_is_a_contract_violation(self):
        values = np.random.default_rng(12).normal(size=(20, 3))
        with mock.patch('Connectivity.windowing.window_count', return_value=99):
            with self.assertRaises(ContractViolation) as caught:
                windowed_correlation(values, step=2)
        self.assertEqual(caught.exception.code, 'window_count')


class VectorizeTests(SimpleTestCase):
    def test_length_for_53_networks(self):
        self.assertEqual(vectorize_upper(np.eye(53)).shape, (1378,))

    def test_two_by_two(self):
        np.testing.assert_array_equal(vectorize_upper([[1.0, 0.3], [0.3, 1.0]]), [0.3])

    def test_round_trip_on_random_symmetric_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 12))
            a = rng.uniform(-1, 1, size=(n, n))
            m = (a + a.T) / 2
            np.fill_diagonal(m, 1.0)
            np.testing.assert_array_equal(unvectorize_upper(vectorize_upper(m)), m)

    def test_asymmetric_matrix_is_rejected(self):
        with self.assertRaises(ContractViolation):
            vectorize_upper([[1.0, 0.2], [0.1, 1.0]])


class DomainPartitionTests(SimpleTestCase):
    def test_default_covers_53_networks_in_order(self):
        partition = DomainPartition.default()
        self.assertEqual(partition.n_networks, 53)
        self.assertEqual(partition.names, ('SC', 'AUD', 'SM', 'VS', 'CC', 'DM', 'CB'))
        covered = [i for r in partition.ranges for i in r]
        self.assertEqual(covered, list(range(53)))

    def test_slice_and_labels(self):
        partition = DomainPartition.desk()
        self.assertEqual(partition.slice_of('VS'), slice(8, 12))
        self.assertEqual(partition.labels()[:5], ['SC'] * 4 + ['SM'])

    def test_mismatch_and_bad_partitions(self):
        with self.assertRaises(ContractViolation):
            DomainPartition.desk().check_covers(53)
        with self.assertRaises(ContractViolation):
            DomainPartition(('A', 'A'), (2, 2))
        with self.assertRaises(ContractViolation):
            DomainPartition(('A',), (0,))


class FormatTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.tc = NetworkTimecourse(
            np.random.default_rng(1).normal(size=(15, 3)), tr_seconds=2.0,
            network_names=('a', 'b', 'c'),
        )

    def tearDown(self):
        self.tmp.cleanup()

    def test_csv_keeps_names_and_values(self):
        path = self.root / 'tc.csv'
        write_timecourse_csv(self.tc, path)
        loaded = read_timecourse(path)
        self.assertEqual(loaded.network_names, ('a', 'b', 'c'))
        np.testing.assert_array_equal(loaded.values, self.tc.values)

    def test_binary_with_sidecar(self):
        path = self.root / 'tc.bin'
        write_timecourse_binary(self.tc, path)
        loaded = read_timecourse(path)
        self.assertEqual(loaded.tr_seconds, 2.0)
        np.testing.assert_array_equal(loaded.values, self.tc.values)

    def test_dfnc_payload_is_window_major(self):
        seq = windowed_correlation(self.tc, taper_weights(10, 3))
        path = self.root / 'dfnc.bin'
        write_dfnc(seq, path)
        raw = np.fromfile(path, dtype='<f8')
        np.testing.assert_array_equal(raw[:9], seq.windows[0].reshape(-1))
        loaded = read_dfnc(path)
        self.assertEqual((loaded.window_width, loaded.step, loaded.sigma), (10, 1, 3.0))
        np.testing.assert_array_equal(loaded.windows, seq.windows)

    def test_truncated_payload_is_rejected(self):
        path = self.root / 'tc.bin'
        write_timecourse_binary(self.tc, path)
        path.write_bytes(path.read_bytes()[:-8])
        with self.assertRaises(ContractViolation):
            read_timecourse(path)

    def test_missing_sidecar_is_rejected(self):
        path = self.root / 'lonely.bin'
        np.zeros(4).tofile(path)
        with self.assertRaises(ContractViolation):
            read_timecourse(path)


class TaperWeightsTypeTests(SimpleTestCase):
    def test_width_is_weight_count(self):
        self.assertEqual(TaperWeights(np.full(4, 0.25), 0.0).width, 4)
