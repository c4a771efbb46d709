import unittest
import math

import numpy as np

from pyspmi import clustering_metrics
from pyspmi import noisy_net
from pyspmi.clustering_metrics import BinningSpec
from pyspmi.noisy_net import ActivationSet


def column(*values):
    return np.array(values, dtype=np.float64).reshape(-1, 1)


class BinningSpecTestCase(unittest.TestCase):

    def test_bad_bin_size(self):
        for b in (0, -0.1, float('inf')):
            with self.subTest(bin_size=b):
                with self.assertRaises(ValueError):
                    BinningSpec(b)

    def test_bad_range(self):
        with self.assertRaises(ValueError):
            BinningSpec(0.1, lo=1.0, hi=-1.0)

        with self.assertRaises(ValueError):
            BinningSpec(3.0, lo=-1.0, hi=1.0)

    def test_observed_range(self):
        spec = BinningSpec(0.5, lo=None, hi=None)
        lo, hi = spec.range_for(np.array([[0.0, 2.0], [1.0, 2.0]]))
        np.testing.assert_array_equal(lo, [0.0, 2.0])
        np.testing.assert_array_equal(hi, [1.0, 2.5])

    def test_activation_ranges(self):
        spec = BinningSpec(0.5, lo=None, hi=None)
        tanh = spec.for_activation('tanh')
        self.assertEqual((tanh.lo, tanh.hi), (-1.0, 1.0))
        linear = spec.for_activation('linear')
        self.assertEqual((linear.lo, linear.hi), (None, None))

        # relu starts at zero even when every value is positive.
        lo, hi = spec.for_activation('relu').range_for(column(2.0, 3.0))
        np.testing.assert_array_equal(lo, [0.0])
        np.testing.assert_array_equal(hi, [3.0])

    def test_relu_bins_start_at_zero(self):
        spec = BinningSpec(0.5, lo=None, hi=None)
        values = column(0.4, 0.6)
        self.assertEqual(
            clustering_metrics.binned_entropy(values, spec), 0.0)
        self.assertAlmostEqual(
            clustering_metrics.binned_entropy(
                values, spec.for_activation('relu')), math.log(2))

    def test_pinned_range_kept(self):
        spec = BinningSpec(0.5, lo=-2.0, hi=None).for_activation('relu')
        self.assertEqual((spec.lo, spec.hi), (-2.0, None))


class BinIndicesTestCase(unittest.TestCase):

    def test_floor(self):
        idx = clustering_metrics.bin_indices(column(-1.0, -0.6, 0.0, 0.74),
                                             BinningSpec(0.5))
        np.testing.assert_array_equal(idx[:, 0], [0, 0, 2, 3])

    def test_upper_edge_in_last_bin(self):
        idx = clustering_metrics.bin_indices(column(1.0), BinningSpec(0.5))
        self.assertEqual(idx[0, 0], 3)

    def test_clamp(self):
        idx = clustering_metrics.bin_indices(column(-7.0, 1.5),
                                             BinningSpec(0.5))
        np.testing.assert_array_equal(idx[:, 0], [0, 3])

    def test_out_of_range(self):
        spec = BinningSpec(0.5, clamp_out_of_range=False)
        with self.assertRaises(clustering_metrics.OutOfRangeError) as cm:
            clustering_metrics.bin_indices(np.array([[0.0, 0.2],
                                                     [0.1, 1.5]]), spec)

        self.assertEqual(cm.exception.row, 1)
        self.assertEqual(cm.exception.coordinate, 1)
        self.assertEqual(cm.exception.value, 1.5)

    def test_overflow_bin(self):
        spec = BinningSpec(1.0, lo=0.0, hi=5.0, overflow=True,
                           clamp_out_of_range=False)
        idx = clustering_metrics.bin_indices(column(0.5, 4.9, 5.0, 100.0),
                                             spec)
        np.testing.assert_array_equal(idx[:, 0], [0, 4, 5, 5])

    def test_overflow_still_checks_lower_edge(self):
        spec = BinningSpec(1.0, lo=0.0, hi=5.0, overflow=True,
                           clamp_out_of_range=False)
        with self.assertRaises(clustering_metrics.OutOfRangeError):
            clustering_metrics.bin_indices(column(-0.5), spec)

    def test_per_dimension_range(self):
        spec = BinningSpec(1.0, lo=[0.0, -10.0], hi=[4.0, 10.0])
        idx = clustering_metrics.bin_indices(np.array([[3.5, -9.5]]), spec)
        np.testing.assert_array_equal(idx, [[3, 0]])


class BinnedEntropyTestCase(unittest.TestCase):

    def test_identical_rows(self):
        acts = ActivationSet(np.full((10, 3), 0.2))
        self.assertEqual(
            clustering_metrics.binned_entropy(acts, BinningSpec(0.1)), 0.0)

    def test_distinct_bins(self):
        acts = ActivationSet(np.linspace(-0.95, 0.95, 20).reshape(-1, 1))
        self.assertAlmostEqual(
            clustering_metrics.binned_entropy(acts, BinningSpec(0.1)),
            math.log(20), places=12)

    def test_two_bins(self):
        acts = ActivationSet(column(-0.9, -0.8, 0.5, 0.6))
        self.assertAlmostEqual(
            clustering_metrics.binned_entropy(acts, BinningSpec(0.5)),
            math.log(2), places=12)

    def test_joint_symbols(self):
        # Same marginals, different joints.
        a = np.array([[-0.9, -0.9], [0.9, 0.9]] * 2)
        b = np.array([[-0.9, -0.9], [0.9, 0.9], [-0.9, 0.9], [0.9, -0.9]])
        spec = BinningSpec(0.5)
        self.assertAlmostEqual(clustering_metrics.binned_entropy(a, spec),
                               math.log(2), places=12)
        self.assertAlmostEqual(clustering_metrics.binned_entropy(b, spec),
                               math.log(4), places=12)

    def test_upper_bound(self):
        rng = np.random.default_rng(0)
        for n, d, b in ((50, 1, 0.5), (500, 3, 0.25), (20, 4, 0.1)):
            with self.subTest(n=n, d=d, bin_size=b):
                values = rng.uniform(-1, 1, (n, d))
                h = clustering_metrics.binned_entropy(values, BinningSpec(b))
                bound = min(math.log(n), d * math.log(math.ceil(2 / b)))
                self.assertLessEqual(h, bound + 1e-12)

    def test_refining_never_decreases(self):
        rng = np.random.default_rng(1)
        values = np.tanh(rng.normal(size=(300, 3)))
        h = [clustering_metrics.binned_entropy(values, BinningSpec(b))
             for b in (0.5, 0.25, 0.125, 0.0625)]
        self.assertTrue(np.all(np.diff(h) >= -1e-12))

    def test_deterministic_net_fine_bins(self):
        data = noisy_net.spiral_dataset(25, 0.05, 1.5, seed=0)
        net = noisy_net.build_mlp([2, 5, 4, 2], beta=0.0, seed=0)
        spec = BinningSpec(1e-9)
        for layer in (1, 2):
            with self.subTest(layer=layer):
                acts = noisy_net.collect_activations(
                    net, data, layer, mode='deterministic')
                self.assertAlmostEqual(
                    clustering_metrics.binned_entropy(acts, spec),
                    math.log(data.m), places=12)


class PerUnitBinnedEntropyTestCase(unittest.TestCase):

    def test_constant_and_alternating(self):
        values = np.column_stack((np.full(10, 0.3),
                                  np.tile([-0.7, 0.7], 5)))
        h = clustering_metrics.per_unit_binned_entropy(values,
                                                        BinningSpec(0.5))
        self.assertEqual(h[0], 0.0)
        self.assertAlmostEqual(h[1], math.log(2), places=12)

    def test_uniform_column(self):
        values = np.random.default_rng(2).uniform(-1, 1, (100000, 1))
        h = clustering_metrics.per_unit_binned_entropy(values,
                                                        BinningSpec(0.5))
        self.assertLess(abs(h[0] - math.log(4)), 0.01)


class EntropySlopesTestCase(unittest.TestCase):

    def test_constant(self):
        mean, std, slopes = clustering_metrics.entropy_slopes(
            [[1.0, 2.0]] * 4, [0, 1, 2, 3])
        self.assertEqual(mean, 0.0)
        self.assertEqual(std, 0.0)
        np.testing.assert_array_equal(slopes, [0.0, 0.0])

    def test_exact_line(self):
        epochs = np.arange(0, 100, 10)
        per_epoch = [np.full(5, 3 - 0.01 * e) for e in epochs]
        mean, std, slopes = clustering_metrics.entropy_slopes(per_epoch,
                                                              epochs)
        self.assertAlmostEqual(mean, -0.01, places=12)
        self.assertAlmostEqual(std, 0.0, places=12)

    def test_noisy_trend(self):
        rng = np.random.default_rng(3)
        epochs = np.arange(128)
        per_epoch = [2.0 - 0.002 * e + rng.normal(0, 1e-4, 16)
                     for e in epochs]
        mean, std, _ = clustering_metrics.entropy_slopes(per_epoch, epochs)
        self.assertLess(abs(mean + 0.002), 1e-4)

    def test_population_std(self):
        mean, std, slopes = clustering_metrics.entropy_slopes(
            [[0.0, 0.0], [1.0, 3.0]], [0, 1])
        np.testing.assert_allclose(slopes, [1.0, 3.0])
        self.assertAlmostEqual(mean, 2.0)
        self.assertAlmostEqual(std, 1.0)

    def test_single_epoch(self):
        with self.assertRaises(clustering_metrics.SlopeError):
            clustering_metrics.entropy_slopes([[1.0, 2.0]], [0])

    def test_ragged(self):
        with self.assertRaises(clustering_metrics.SlopeError):
            clustering_metrics.entropy_slopes([[1.0, 2.0], [1.0]], [0, 1])

    def test_equal_epochs(self):
        with self.assertRaises(clustering_metrics.SlopeError):
            clustering_metrics.entropy_slopes([[1.0], [2.0]], [5, 5])


class PairwiseDistanceHistogramTestCase(unittest.TestCase):

    def test_three_points(self):
        acts = ActivationSet(column(0.0, 3.0, 4.0), labels=np.array([0, 0, 1]))
        hist = clustering_metrics.pairwise_distance_histogram(acts, n_bins=4)
        np.testing.assert_array_equal(hist.edges, [0, 1, 2, 3, 4])
        np.testing.assert_array_equal(hist.within_counts, [0, 0, 0, 1])
        np.testing.assert_array_equal(hist.between_counts, [0, 1, 0, 1])
        self.assertEqual(hist.n_within_pairs, 1)
        self.assertEqual(hist.n_between_pairs, 2)
        self.assertFalse(hist.subsampled)

    def test_two_repeated_points(self):
        values = np.vstack((np.zeros((3, 2)), np.full((3, 2), [2.0, 0.0])))
        acts = ActivationSet(values, labels=np.array([0, 0, 0, 1, 1, 1]))
        hist = clustering_metrics.pairwise_distance_histogram(acts, n_bins=5)
        self.assertEqual(hist.within_counts[0], 6)
        self.assertEqual(hist.within_counts.sum(), 6)
        self.assertEqual(hist.between_counts[-1], 9)
        self.assertEqual(hist.between_counts.sum(), 9)

    def test_identical_single_class(self):
        acts = ActivationSet(np.ones((5, 3)), labels=np.zeros(5, dtype=int))
        hist = clustering_metrics.pairwise_distance_histogram(acts, n_bins=10)
        self.assertEqual(hist.within_counts[0], 10)
        self.assertEqual(hist.between_counts.sum(), 0)
        self.assertEqual(hist.n_between_pairs, 0)
        self.assertEqual(hist.edges[-1], 1.0)
        self.assertTrue(math.isnan(
            clustering_metrics.histogram_mode(hist, 'between')))

    def test_identical_non_dyadic_rows(self):
        row = np.random.default_rng(12).normal(size=7)
        acts = ActivationSet(np.tile(row, (10, 1)),
                             labels=np.zeros(10, dtype=int))
        hist = clustering_metrics.pairwise_distance_histogram(acts, n_bins=10)
        self.assertEqual(hist.within_counts[0], 45)
        self.assertEqual(hist.within_counts.sum(), 45)
        self.assertEqual(hist.edges[-1], 1.0)

    def test_identical_rows_subsampled(self):
        row = np.random.default_rng(13).normal(size=5)
        acts = ActivationSet(np.tile(row, (20, 1)),
                             labels=np.arange(20) % 2)
        with self.assertLogs('pyspmi.clustering_metrics', level='WARNING'):
            hist = clustering_metrics.pairwise_distance_histogram(
                acts, n_bins=4, pair_cap=50)
        self.assertEqual(hist.within_counts[0] + hist.between_counts[0], 50)

    def test_totals(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 3, 300)
        acts = ActivationSet(rng.normal(size=(300, 4)), labels=labels)
        hist = clustering_metrics.pairwise_distance_histogram(acts)
        sizes = np.bincount(labels)
        within = int(np.sum(sizes * (sizes - 1) // 2))
        between = int((sizes.sum() ** 2 - np.sum(sizes ** 2)) // 2)
        self.assertEqual(hist.n_within_pairs, within)
        self.assertEqual(hist.n_between_pairs, between)
        self.assertEqual(hist.within_counts.sum(), within)
        self.assertEqual(hist.between_counts.sum(), between)

    def test_max_distance_clips(self):
        acts = ActivationSet(column(0.0, 1.0, 10.0),
                             labels=np.array([0, 0, 0]))
        hist = clustering_metrics.pairwise_distance_histogram(
            acts, n_bins=2, max_distance=2.0)
        np.testing.assert_array_equal(hist.within_counts, [0, 3])

    def test_subsampling(self):
        rng = np.random.default_rng(5)
        acts = ActivationSet(rng.normal(size=(100, 2)),
                             labels=rng.integers(0, 2, 100))
        with self.assertLogs('pyspmi.clustering_metrics', level='WARNING'):
            a = clustering_metrics.pairwise_distance_histogram(
                acts, pair_cap=1000, seed=1, max_distance=5.0)

        b = clustering_metrics.pairwise_distance_histogram(
            acts, pair_cap=1000, seed=1, max_distance=5.0)
        self.assertTrue(a.subsampled)
        self.assertEqual(a.pair_cap, 1000)
        self.assertEqual(a.n_within_pairs + a.n_between_pairs, 1000)
        np.testing.assert_array_equal(a.within_counts, b.within_counts)
        np.testing.assert_array_equal(a.between_counts, b.between_counts)

    def test_triu_pairs(self):
        for n in (2, 3, 7, 40):
            with self.subTest(n=n):
                i, j = clustering_metrics._triu_pairs(
                    np.arange(n * (n - 1) // 2), n)
                ei, ej = np.triu_indices(n, 1)
                np.testing.assert_array_equal(i, ei)
                np.testing.assert_array_equal(j, ej)

    def test_needs_labels(self):
        with self.assertRaises(ValueError):
            clustering_metrics.pairwise_distance_histogram(
                ActivationSet(np.zeros((3, 1))))

    def test_mode(self):
        acts = ActivationSet(column(0.0, 3.0, 4.0), labels=np.array([0, 0, 1]))
        hist = clustering_metrics.pairwise_distance_histogram(acts, n_bins=4)
        self.assertEqual(clustering_metrics.histogram_mode(hist, 'within'),
                         3.5)


if __name__ == '__main__':
    unittest.main()
