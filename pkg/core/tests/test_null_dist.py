import itertools
import math

import numpy as np
from django.test import SimpleTestCase

from core import null_dist
from core.exceptions import BudgetExceededError, DomainError, ModeMismatchError
from core.null_dist import Mode
from core.placement_stat import BlockSummary


def enumerate_scores(n, m, k):
    """sum_j C(U_j, k-1) for every placement of n treated among n + m ranks."""
    scores = []
    for treated in itertools.combinations(range(n + m), n):
        chosen = set(treated)
        scores.append(sum(math.comb(sum(1 for c in range(r) if c not in chosen), k - 1) for r in treated))
    return np.array(scores, dtype=float)


class MomentTests(SimpleTestCase):
    def test_mann_whitney_moments(self):
        mean, variance = null_dist.block_moments(3, 3, 2)
        self.assertAlmostEqual(mean, 4.5)
        self.assertAlmostEqual(variance, 5.25)

    def test_k_too_large_for_block(self):
        self.assertEqual(null_dist.block_moments(2, 3, 6), (0.0, 0.0))

    def test_moments_match_enumeration(self):
        scores = enumerate_scores(2, 4, 3)
        mean, variance = null_dist.block_moments(2, 4, 3)
        self.assertAlmostEqual(mean, scores.mean())
        self.assertAlmostEqual(variance, scores.var())

    def test_mann_whitney_closed_form(self):
        for n in range(1, 31):
            for m in range(1, 31):
                mean, variance = null_dist.block_moments(n, m, 2)
                self.assertEqual(mean, n * m / 2)
                expected = n * m * (n + m + 1) / 12
                self.assertAlmostEqual(variance, expected, delta=1e-12 * expected)

    def test_weight_scales_moments(self):
        mean, variance = null_dist.block_moments(3, 5, 3, w=0.5)
        base_mean, base_variance = null_dist.block_moments(3, 5, 3)
        self.assertAlmostEqual(mean, 0.5 * base_mean)
        self.assertAlmostEqual(variance, 0.25 * base_variance)

    def test_total_moments_add(self):
        one = null_dist.block_moments(4, 6, 3)
        two = null_dist.total_moments([(4, 6, 1.0), (4, 6, 1.0)], 3)
        self.assertAlmostEqual(two[0], 2 * one[0])
        self.assertAlmostEqual(two[1], 2 * one[1])

    def test_many_median_blocks(self):
        mean, _ = null_dist.total_moments([(24, 73, 1.0)] * 232, 2)
        self.assertAlmostEqual(mean, 203232.0)

    def test_invalid_block(self):
        with self.assertRaises(DomainError):
            null_dist.block_moments(0, 3, 2)


class ExactPmfTests(SimpleTestCase):
    def test_single_pair(self):
        dist = null_dist.block_exact_pmf(1, 1, 2)
        np.testing.assert_array_equal(dist.support, [0.0, 1.0])
        np.testing.assert_allclose(dist.probabilities, [0.5, 0.5])

    def test_mann_whitney_two_by_two(self):
        dist = null_dist.block_exact_pmf(2, 2, 2)
        np.testing.assert_array_equal(dist.support, np.arange(5.0))
        np.testing.assert_allclose(dist.probabilities, np.array([1, 1, 2, 1, 1]) / 6)

    def test_matches_enumeration(self):
        for n, m, k in [(2, 3, 3), (3, 4, 2), (3, 5, 4)]:
            values, counts = np.unique(enumerate_scores(n, m, k), return_counts=True)
            dist = null_dist.block_exact_pmf(n, m, k)
            np.testing.assert_array_equal(dist.support, values)
            np.testing.assert_allclose(dist.probabilities, counts / counts.sum(), rtol=1e-12)

    def test_every_small_block_matches_enumeration(self):
        for total in range(2, 11):
            for n in range(1, total):
                m = total - n
                for k in range(2, m + 2):
                    scores = enumerate_scores(n, m, k)
                    values, counts = np.unique(scores, return_counts=True)
                    dist = null_dist.block_exact_pmf(n, m, k)
                    np.testing.assert_array_equal(dist.support, values, err_msg=f"{(n, m, k)}")
                    np.testing.assert_allclose(dist.probabilities, counts / counts.sum(), rtol=1e-12,
                                               err_msg=f"{(n, m, k)}")
                    mean, variance = null_dist.block_moments(n, m, k)
                    self.assertAlmostEqual(mean, scores.mean(), delta=1e-9)
                    self.assertAlmostEqual(variance, scores.var(), delta=1e-9)

    def test_point_mass_when_k_exceeds_controls(self):
        dist = null_dist.block_exact_pmf(3, 2, 5)
        np.testing.assert_array_equal(dist.support, [0.0])

    def test_budget(self):
        with self.assertRaises(BudgetExceededError) as ctx:
            null_dist.block_exact_pmf(24, 73, 5, budget=1000)
        self.assertIn("normal", str(ctx.exception))

    def test_moments_agree_with_closed_form(self):
        dist = null_dist.block_exact_pmf(6, 9, 3, w=0.25)
        mean, variance = null_dist.block_moments(6, 9, 3, w=0.25)
        self.assertAlmostEqual(dist.mean, mean)
        self.assertAlmostEqual(dist.variance, variance)


class ConvolveTests(SimpleTestCase):
    def test_point_mass_is_identity(self):
        u22 = null_dist.block_exact_pmf(2, 2, 2)
        dist = null_dist.convolve([u22, null_dist.exact(np.array([0.0]), np.array([1.0]))])
        np.testing.assert_array_equal(dist.support, u22.support)
        np.testing.assert_allclose(dist.probabilities, u22.probabilities)

    def test_two_blocks_match_enumeration(self):
        single = enumerate_scores(2, 2, 2)
        values, counts = np.unique(np.add.outer(single, single).ravel(), return_counts=True)
        u22 = null_dist.block_exact_pmf(2, 2, 2)
        dist = null_dist.convolve([u22, u22])
        np.testing.assert_array_equal(dist.support, values)
        np.testing.assert_allclose(dist.probabilities, counts / 36)

    def test_weighted_blocks_off_lattice(self):
        a = null_dist.block_exact_pmf(2, 2, 2, w=1 / 3)
        b = null_dist.block_exact_pmf(1, 1, 2, w=0.7)
        dist = null_dist.convolve([a, b])
        self.assertAlmostEqual(dist.probabilities.sum(), 1.0)
        self.assertAlmostEqual(dist.mean, a.mean + b.mean)
        self.assertAlmostEqual(dist.variance, a.variance + b.variance)

    def test_mixed_modes(self):
        with self.assertRaises(ModeMismatchError):
            null_dist.convolve([null_dist.block_exact_pmf(1, 1, 2), null_dist.normal(0.0, 1.0)])


class CriticalValueTests(SimpleTestCase):
    def test_standard_normal(self):
        crit = null_dist.critical_value(null_dist.normal(0.0, 1.0), 0.05)
        self.assertAlmostEqual(crit.t_tilde, 1.6449, delta=1e-4)

    def test_exact(self):
        crit = null_dist.critical_value(null_dist.block_exact_pmf(2, 2, 2), 0.05)
        self.assertEqual(crit.t_tilde, 4.0)

    def test_point_mass(self):
        dist = null_dist.exact(np.array([7.5]), np.array([1.0]))
        for alpha in (0.01, 0.5, 0.99):
            self.assertEqual(null_dist.critical_value(dist, alpha).t_tilde, 7.5)

    def test_zero_variance_normal(self):
        with self.assertRaises(DomainError):
            null_dist.critical_value(null_dist.normal(1.0, 0.0), 0.05)

    def test_alpha_domain(self):
        with self.assertRaises(DomainError):
            null_dist.critical_value(null_dist.normal(0.0, 1.0), 1.0)

    def test_normal_close_to_exact_for_many_blocks(self):
        blocks = [(24, 73, 1.0)] * 200
        exact = null_dist.convolve([null_dist.block_exact_pmf(24, 73, 2)] * 200)
        approx = null_dist.normal(*null_dist.total_moments(blocks, 2))
        gap = abs(null_dist.critical_value(exact, 0.05).t_tilde - null_dist.critical_value(approx, 0.05).t_tilde)
        self.assertLess(gap, 0.005 * approx.sd)


class TailTests(SimpleTestCase):
    def test_exact_tails(self):
        u22 = null_dist.block_exact_pmf(2, 2, 2)
        self.assertAlmostEqual(null_dist.upper_tail(u22, 4.0), 1 / 6)
        self.assertAlmostEqual(null_dist.upper_tail(u22, 0.0), 1.0)
        self.assertAlmostEqual(null_dist.lower_tail(u22, 1.0), 2 / 6)

    def test_normal_tail(self):
        self.assertAlmostEqual(null_dist.upper_tail(null_dist.normal(0.0, 1.0), 1.6448536), 0.05, places=6)


class ModeSelectionTests(SimpleTestCase):
    def block(self, i, n=3, m=4):
        return BlockSummary(block_id=f"b{i:02d}", n=n, m=m, placements=(0,) * n)

    def test_small_studies_are_exact(self):
        self.assertIs(null_dist.select_mode([self.block(i) for i in range(5)], 2), Mode.EXACT)

    def test_many_blocks_are_normal(self):
        self.assertIs(null_dist.select_mode([self.block(i) for i in range(30)], 2), Mode.NORMAL)

    def test_large_block_is_normal(self):
        self.assertIs(null_dist.select_mode([self.block(0, 24, 73)], 5, budget=1000), Mode.NORMAL)

    def test_explicit_request_wins(self):
        self.assertIs(null_dist.select_mode([self.block(0)], 2, Mode.NORMAL), Mode.NORMAL)
