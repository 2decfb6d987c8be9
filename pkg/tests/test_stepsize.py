import unittest
from fractions import Fraction

import pytest

from exceptions import ConfigurationError
from stepsize import (
    StepSizes,
    pjadmm_step_sizes,
    preset_step_sizes,
    rdbcd_step_sizes,
    sadmm_step_sizes,
    table1_step_sizes,
    validity_check,
)


class TestDefaultStepSizes(unittest.TestCase):

    def test_three_block_values(self):
        expected = {1: (Fraction(1, 5), Fraction(0)),
                    2: (Fraction(1, 4), Fraction(1, 2)),
                    3: (Fraction(1, 3), Fraction(2, 3))}
        for K, (tau, nu) in expected.items():
            s = table1_step_sizes(3, K, [3])
            self.assertEqual(s.tau, (tau,))
            self.assertEqual(s.nu, (nu,))

    def test_overlapping_group_layout(self):
        # ten groups plus the shared block, every row touches two blocks
        degrees = [2] * 10
        full = table1_step_sizes(11, 11, degrees)
        self.assertEqual(set(full.tau), {Fraction(1, 2)})
        self.assertEqual(set(full.nu), {Fraction(1, 2)})
        partial = table1_step_sizes(11, 5, degrees)
        self.assertEqual(set(partial.tau), {Fraction(5, 34)})
        self.assertEqual(set(partial.nu), {Fraction(1, 2)})
        single = table1_step_sizes(11, 1, degrees)
        self.assertEqual(set(single.tau), {Fraction(1, 21)})
        self.assertEqual(set(single.nu), {Fraction(0)})

    def test_every_table_choice_is_certified(self):
        for J in range(1, 13):
            for K in range(1, J + 1):
                for d in range(1, J + 1):
                    s = table1_step_sizes(J, K, [d])
                    report = validity_check(s, J, [d])
                    self.assertTrue(report.ok, f"J={J} K={K} d={d}: {report.violations}")
                    self.assertEqual(report.regime, "primal-sampling")
                    self.assertGreaterEqual(report.zeta[0], 0)
                    if K == 1:
                        self.assertEqual(report.beta[0], Fraction(1, J))
                    elif K < J:
                        self.assertEqual(report.beta[0], Fraction(K, J * min(d, K)))
                    else:
                        self.assertEqual(report.beta[0], Fraction(1, d))

    def test_full_sampling_single_block_rows(self):
        s = table1_step_sizes(3, 3, [1])
        report = validity_check(s, 3, [1])
        self.assertTrue(report.ok)
        self.assertEqual(report.beta, (Fraction(1),))
        self.assertEqual(report.zeta, (Fraction(0),))

    def test_steps_grow_with_K(self):
        for J in range(1, 13):
            for d in range(1, J + 1):
                steps = [table1_step_sizes(J, K, [d]) for K in range(1, J + 1)]
                for smaller, larger in zip(steps, steps[1:]):
                    self.assertLessEqual(smaller.tau[0], larger.tau[0])
                    self.assertLessEqual(smaller.nu[0], larger.nu[0])
                self.assertEqual(steps[0].tau[0], Fraction(1, 2 * J - 1))
                self.assertEqual(steps[-1].tau[0], Fraction(1, d))

    def test_tripled_tau_loses_certificate(self):
        base = table1_step_sizes(3, 3, [1])
        tripled = StepSizes(tuple(3 * t for t in base.tau), base.nu, 3, 1, base.K_tilde, 1, "manual")
        report = validity_check(tripled, 3, [1])
        self.assertFalse(report.ok)
        self.assertLess(report.beta[0], 0)

    def test_invalid_inputs(self):
        with self.assertRaises(ConfigurationError):
            table1_step_sizes(3, 0, [2])
        with self.assertRaises(ConfigurationError):
            table1_step_sizes(3, 4, [2])
        with self.assertRaises(ConfigurationError):
            table1_step_sizes(3, 2, [0])
        with self.assertRaises(ConfigurationError):
            StepSizes((Fraction(1, 2),), (Fraction(1),), 1, 1, (1,), 1)
        with self.assertRaises(ConfigurationError):
            StepSizes((Fraction(0),), (Fraction(0),), 1, 1, (1,), 1)


class TestDualSampling:

    def test_never_smaller_than_primal_sampling(self):
        for J in range(1, 9):
            for I in range(1, 6):
                for K in range(1, J + 1):
                    for K_I in range(1, I + 1):
                        degrees = [min(J, 1 + (i % J)) for i in range(I)]
                        dual = rdbcd_step_sizes(J, I, K, K_I, degrees)
                        primal = table1_step_sizes(J, K, degrees)
                        assert all(t_d >= t_p for t_d, t_p in zip(dual.tau, primal.tau))

    def test_single_row_single_block_sampling(self):
        for J in range(2, 8):
            s = rdbcd_step_sizes(J, J, 1, 1, [J] * J)
            assert set(s.tau) == {Fraction(J, 3 * J - 2)}
            assert set(s.nu) == {Fraction(0)}

    def test_certified_in_dual_regime(self):
        for J in range(2, 8):
            for K in range(1, J + 1):
                for d in range(1, J + 1):
                    s = rdbcd_step_sizes(J, 4, K, 2, [d] * 4)
                    report = validity_check(s, J, [d] * 4)
                    assert report.regime == "dual-sampling"
                    assert report.ok, report.violations
                    assert all(b >= 0 for b in report.beta)

    def test_rejects_bad_row_sampling(self):
        with pytest.raises(ConfigurationError):
            rdbcd_step_sizes(3, 2, 1, 3, [2, 2])
        with pytest.raises(ConfigurationError):
            rdbcd_step_sizes(3, 2, 1, 1, [2, 2, 2])


class TestOtherVariants:

    def test_sadmm(self):
        s = sadmm_step_sizes(4, [4, 2])
        assert s.tau == (Fraction(1, 4),) * 2
        assert s.nu == (Fraction(3, 4),) * 2
        assert s.K == 4
        with pytest.raises(ConfigurationError):
            sadmm_step_sizes(0)

    def test_pjadmm_eta_and_certificate(self):
        spectral = {(0, 0): 2.0, (0, 1): 2.0}
        steps, eta = pjadmm_step_sizes([2], rho=1.0, I=1, spectral=spectral, alpha=[1.0, 1.0])
        assert eta == [pytest.approx(2.0), pytest.approx(2.0)]
        assert steps.tau == (Fraction(1),)
        assert steps.nu == (Fraction(0),)
        report = validity_check(steps, 2, [2], eta=eta, spectral=spectral, alpha=[1.0, 1.0], rho=1.0)
        assert report.regime == "proximal"
        assert report.ok, report.violations

    def test_pjadmm_residual_constants_nonnegative(self):
        for d in range(2, 7):
            spectral = {(0, j): 1.0 for j in range(d)}
            steps, eta = pjadmm_step_sizes([d], 1.0, 1, spectral, [1.0] * d)
            report = validity_check(steps, d, [d], eta=eta, spectral=spectral, alpha=[1.0] * d)
            assert report.ok, report.violations
            assert report.beta == (Fraction(1, d),)
            assert report.gamma == (Fraction(0),)
            assert report.zeta == (Fraction(0),)

    def test_pjadmm_tolerates_rounded_eta(self):
        spectral = {(0, 0): 1.0000000000000002, (0, 1): 1.0000000000000002, (0, 2): 1.0000000000000002}
        steps, eta = pjadmm_step_sizes([3], 1.0, 1, spectral, [1.0] * 3)
        rounded_down = [e * (1 - 1e-15) for e in eta]
        report = validity_check(steps, 3, [3], eta=rounded_down, spectral=spectral, alpha=[1.0] * 3)
        assert report.ok, report.violations
        too_small = [e * (1 - 1e-6) for e in eta]
        assert not validity_check(steps, 3, [3], eta=too_small, spectral=spectral, alpha=[1.0] * 3).ok

    def test_pjadmm_needs_positive_moduli(self):
        with pytest.raises(ConfigurationError):
            pjadmm_step_sizes([2], 1.0, 1, {(0, 0): 1.0, (0, 1): 1.0}, [1.0, 0.0])

    def test_small_eta_leaves_proximal_interval(self):
        spectral = {(0, 0): 2.0, (0, 1): 2.0}
        steps, _ = pjadmm_step_sizes([2], 1.0, 1, spectral, [1.0, 1.0])
        report = validity_check(steps, 2, [2], eta=[0.5, 0.5], spectral=spectral, alpha=[1.0, 1.0])
        assert not report.ok

    def test_presets(self):
        tuned = preset_step_sizes("tuned-rpca", 3, 2, [3])
        assert tuned.tau == (Fraction(1, 3),)
        assert tuned.nu == (Fraction(1, 2),)
        assert tuned.label == "tuned-rpca"
        assert preset_step_sizes("table1", 3, 2, [3]) == table1_step_sizes(3, 2, [3])
        with pytest.raises(ConfigurationError):
            preset_step_sizes("text-pdmm3", 3, 2, [3])
        with pytest.raises(ConfigurationError):
            preset_step_sizes("no-such-preset", 3, 1, [3])

    def test_describe_mentions_label_and_values(self):
        text = table1_step_sizes(3, 2, [3]).describe()
        assert text.startswith("table1 K=2")
        assert "tau=1/4" in text


if __name__ == '__main__':
    unittest.main()
