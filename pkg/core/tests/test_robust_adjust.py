import numpy as np
import pandas as pd
import statsmodels.api as sm
from django.test import SimpleTestCase

from core import inference
from core.exceptions import RankDeficiencyError
from core.placement_stat import TrialRecord
from core.robust_adjust import (
    FIT_COLUMNS,
    INTERCEPT,
    CovariateMatrix,
    adjusted_inference,
    huber_fit,
    residualize,
    score_scan_covariates,
)
from core.trial_scoring import TrialEvent, compute_weights


def covariates(values, names=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    names = names or tuple(f"x{i}" for i in range(values.shape[1]))
    return CovariateMatrix(names=tuple(names), values=values)


class HuberFitTests(SimpleTestCase):
    def test_exact_line(self):
        x = np.arange(10.0)
        fit = huber_fit(2.0 + 3.0 * x, covariates(x))
        self.assertAlmostEqual(fit.coefficients[INTERCEPT], 2.0)
        self.assertAlmostEqual(fit.coefficients["x0"], 3.0)
        self.assertEqual(fit.scale, 0.0)
        self.assertTrue(fit.converged)

    def test_resists_outlier(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=60)
        y = 1.0 + 2.0 * x + rng.normal(scale=0.1, size=60)
        y[0] += 100.0
        fit = huber_fit(y, covariates(x))
        self.assertAlmostEqual(fit.coefficients["x0"], 2.0, delta=0.1)
        self.assertLess(fit.weights[0], 0.05)
        ols = sm.OLS(y, sm.add_constant(x)).fit()
        self.assertGreater(abs(ols.params[1] - 2.0), abs(fit.coefficients["x0"] - 2.0))

    def test_weighted_residuals_balance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(80, 2))
        y = x @ [1.0, -1.0] + rng.standard_t(2, size=80)
        fit = huber_fit(y, covariates(x))
        self.assertAlmostEqual(float(np.dot(fit.weights, fit.residuals)), 0.0, places=6)

    def test_large_tuning_is_least_squares(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=40)
        y = x + rng.normal(size=40)
        fit = huber_fit(y, covariates(x), tuning=1e6)
        np.testing.assert_allclose(fit.residuals, sm.OLS(y, sm.add_constant(x)).fit().resid, atol=1e-8)

    def test_residuals_invariant_under_rescaling(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(50, 2))
        y = x[:, 0] + rng.standard_t(3, size=50)
        base = huber_fit(y, covariates(x))
        scaled = huber_fit(y, covariates(x * [10.0, 0.5] + [5.0, -2.0]))
        np.testing.assert_allclose(base.residuals, scaled.residuals, atol=1e-6)

    def test_constant_column(self):
        with self.assertRaises(RankDeficiencyError):
            huber_fit(np.arange(10.0), covariates(np.ones(10)))

    def test_too_few_rows(self):
        with self.assertRaises(RankDeficiencyError):
            huber_fit([1.0, 2.0, 3.0], covariates(np.eye(3)[:, :2]))

    def test_matrix_validation(self):
        with self.assertRaises(ValueError):
            CovariateMatrix(names=("a",), values=np.array([[1.0], [np.nan]]))


class ResidualizeTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(4)
        self.trials = [
            TrialRecord(block_id=f"b{i % 3}", index=i // 3, z=int(i % 4 == 0), response=float(r))
            for i, r in enumerate(rng.normal(size=60))
        ]
        self.X = covariates(rng.normal(size=(60, 2)), ("motion_a", "motion_b"))

    def test_keeps_trial_order(self):
        adjusted, fits = residualize(self.trials, self.X)
        self.assertEqual(len(fits), 1)
        self.assertEqual([(t.block_id, t.index, t.z) for t in adjusted],
                         [(t.block_id, t.index, t.z) for t in self.trials])

    def test_per_block(self):
        adjusted, fits = residualize(self.trials, self.X, per_block=True)
        self.assertEqual(len(fits), 3)
        self.assertEqual(len(adjusted), 60)
        self.assertEqual([fit.block_id for fit in fits], ["b0", "b1", "b2"])
        self.assertEqual(list(fits[0].as_row()), FIT_COLUMNS)

    def test_pooled_fit_row(self):
        _, fits = residualize(self.trials, self.X)
        row = fits[0].as_row()
        self.assertEqual(row["block_id"], "pooled")
        self.assertEqual(row["converged"], 1)
        self.assertGreater(row["iterations"], 0)

    def test_row_mismatch(self):
        with self.assertRaises(RankDeficiencyError):
            residualize(self.trials[:-1], self.X)

    def test_adjusted_report(self):
        report = adjusted_inference(self.trials, self.X, 2)
        self.assertEqual(report.num_blocks, 3)

    def test_noise_covariates_leave_inference_unchanged(self):
        rng = np.random.default_rng(12)
        trials = []
        for b in range(40):
            z = rng.permutation([1] * 20 + [0] * 20)
            responses = rng.normal(size=40) + 0.8 * z
            trials.extend(
                TrialRecord(block_id=f"b{b:02d}", index=i, z=int(zi), response=float(r))
                for i, (zi, r) in enumerate(zip(z, responses))
            )
        X = covariates(rng.normal(size=(len(trials), 3)))
        for k in (2, 5):
            plain = inference.test_no_effect(trials, k)
            adjusted = adjusted_inference(trials, X, k)
            self.assertEqual(adjusted.mode, plain.mode)
            self.assertAlmostEqual(adjusted.deviate, plain.deviate, delta=0.5)


class ScanCovariateTests(SimpleTestCase):
    def test_scored_like_responses(self):
        scans = {"s": pd.DataFrame({"flat": np.full(40, 2.0), "ramp": np.arange(40.0)})}
        events = {"s": [TrialEvent(block_id="s", onset_index=o, z=z) for o, z in [(0, 1), (5, 0)]]}
        names, keys, values = score_scan_covariates(scans, events)
        w = compute_weights().as_array()
        self.assertEqual(names, ("flat", "ramp"))
        self.assertEqual(keys, [("s", 0), ("s", 1)])
        np.testing.assert_allclose(values[:, 0], 2.0)
        self.assertAlmostEqual(values[1, 1], float(np.dot(w, np.arange(5.0, 22.0))))
