import csv
import os
import tempfile
import unittest

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from src.services.model_zoo_service.models import build_model
from src.services.model_zoo_service.specs import get_preset
from src.services.model_zoo_service.split import split_at
from src.services.wire_service.capture import write_capture
from src.services.wire_service.deployment import SimulatedDeployment
from src.services.experiments_service.datasets import synth_dataset
from src.shared.exceptions import (
    BlockTooLarge, DegenerateSignal, InvalidConfig, NoPeakFound, NonFinite, NoValidFactorization,
    StageError, TooFewSamples,
)
from .estimator import (
    AutocorrProfile, autocorrelation, covariance_block, covariance_matrix, covariance_row_means,
    detect_width, enumerate_shapes, estimate_from_matrix, estimate_shape,
)
from .probes import probe_capture
from .reports import PROFILE_COLUMNS, parse_block, write_heatmap_csv, write_profile_csv

RUN_SLOW = settings.SPLITLEAK_RUN_SLOW


def _relative_error(actual, expected):
    return np.linalg.norm(actual - expected) / np.linalg.norm(expected)


def _period_eight(d=512):
    pattern = np.array([4.0, 1, 1, 1, 1, 1, 1, 1])
    return np.tile(pattern, d // 8)


class RowMeanTests(SimpleTestCase):
    def test_single_sample_rejected(self):
        with self.assertRaises(TooFewSamples):
            covariance_row_means(np.ones((1, 8)))

    def test_identical_rows_give_zero(self):
        rows = np.tile(np.arange(16.0), (5, 1))
        self.assertTrue(np.array_equal(covariance_row_means(rows), np.zeros(16)))

    def test_constant_binary64_rows_give_exact_zero(self):
        for n in (2, 3, 7, 100, 513):
            for value in (0.1, 0.3, 0.7, 1.1):
                with self.subTest(n=n, value=value):
                    mu = covariance_row_means(np.full((n, 64), value))
                    self.assertTrue(np.array_equal(mu, np.zeros(64)))
                    with self.assertRaises(DegenerateSignal):
                        autocorrelation(mu, 32)

    def test_matches_materialized_covariance(self):
        X = np.random.default_rng(0).normal(size=(64, 256))
        oracle = covariance_matrix(X).mean(axis=1)
        self.assertLess(_relative_error(covariance_row_means(X), oracle), 1e-10)

    def test_correlated_capture_matches_oracle(self):
        X = probe_capture(8, 8, 128, seed=1)
        oracle = covariance_matrix(X).mean(axis=1)
        self.assertLess(_relative_error(covariance_row_means(X), oracle), 1e-10)

    def test_non_finite_rejected(self):
        X = np.ones((4, 4))
        X[2, 1] = np.nan
        with self.assertRaises(NonFinite):
            covariance_row_means(X)

    def test_shift_invariance(self):
        X = probe_capture(4, 8, 256, seed=2).astype(np.float64)
        shift = np.random.default_rng(3).normal(size=X.shape[1]) * 10
        np.testing.assert_allclose(covariance_row_means(X + shift), covariance_row_means(X), rtol=1e-8, atol=1e-12)
        self.assertEqual(estimate_from_matrix(X + shift).width, estimate_from_matrix(X).width)

    def test_scale_covariance(self):
        X = probe_capture(4, 8, 256, seed=4).astype(np.float64)
        k_max = 40
        base = autocorrelation(covariance_row_means(X), k_max).values
        scaled = autocorrelation(covariance_row_means(3.0 * X), k_max).values
        np.testing.assert_allclose(scaled, 81.0 * base, rtol=1e-9)
        self.assertEqual(estimate_from_matrix(3.0 * X).width, estimate_from_matrix(X).width)


class CovarianceBlockTests(SimpleTestCase):
    def setUp(self):
        self.X = np.random.default_rng(5).normal(size=(40, 30))

    def test_variances_non_negative(self):
        block = covariance_block(self.X, 0, 30)
        self.assertTrue((np.diag(block) >= 0).all())

    def test_matches_full_covariance(self):
        np.testing.assert_allclose(covariance_block(self.X, 5, 17), covariance_matrix(self.X)[5:17, 5:17], rtol=1e-12)

    def test_identical_rows_give_zero_block(self):
        rows = np.tile(np.linspace(0, 1, 12), (3, 1))
        self.assertFalse(np.any(covariance_block(rows, 2, 10)))

    def test_limits(self):
        with self.assertRaises(BlockTooLarge):
            covariance_block(np.zeros((2, 4200)), 0, 4097)
        with self.assertRaises(InvalidConfig):
            covariance_block(self.X, 10, 10)
        with self.assertRaises(InvalidConfig):
            covariance_block(self.X, 0, 31)


class AutocorrelationTests(SimpleTestCase):
    def test_one_hot(self):
        mu = np.zeros(32)
        mu[0] = 1.0
        profile = autocorrelation(mu, 31)
        self.assertEqual(profile.r0, 1.0)
        self.assertFalse(np.any(profile.values[1:]))

    def test_period_eight_dominates_short_lags(self):
        values = autocorrelation(_period_eight(), 12).values
        for k in range(1, 13):
            if k % 8:
                self.assertGreaterEqual(values[8], values[k])

    def test_all_ones(self):
        d = 20
        profile = autocorrelation(np.ones(d), d - 1)
        self.assertTrue(np.array_equal(profile.values, d - np.arange(d, dtype=np.float64)))
        self.assertTrue(np.all(np.diff(profile.values) < 0))

    def test_direct_sum(self):
        mu = np.random.default_rng(6).normal(size=50)
        profile = autocorrelation(mu, 10)
        for k in range(11):
            self.assertAlmostEqual(profile.values[k], sum(mu[i] * mu[i + k] for i in range(50 - k)), places=10)

    def test_normalized_profile(self):
        profile = autocorrelation(_period_eight(64), 20)
        self.assertEqual(profile.normalized[0], 1.0)
        self.assertEqual(len(profile.rows()), 20)
        self.assertEqual(profile.rows()[0][0], 1)

    def test_degenerate(self):
        with self.assertRaises(DegenerateSignal):
            autocorrelation(np.zeros(16), 8)

    def test_k_max_bounds(self):
        with self.assertRaises(InvalidConfig):
            autocorrelation(np.ones(16), 16)
        with self.assertRaises(InvalidConfig):
            autocorrelation(np.ones(16), 0)


class DetectWidthTests(SimpleTestCase):
    def test_planted_period(self):
        profile = autocorrelation(_period_eight(512), 100)
        width, score = detect_width(profile, 512)
        self.assertEqual(width, 8)
        self.assertAlmostEqual(score, profile.values[8] / profile.values[0])

    def test_monotone_profile_has_no_peak(self):
        with self.assertRaises(NoPeakFound):
            detect_width(autocorrelation(np.ones(64), 40), 64)

    def test_non_divisor_peaks_ignored(self):
        profile = AutocorrProfile(values=np.array([10.0, 1, 2, 7, 2, 1, 3, 1]))
        with self.assertRaises(NoPeakFound):
            detect_width(profile, 8)

    def test_tie_goes_to_smaller_lag(self):
        profile = AutocorrProfile(values=np.array([10.0, 1, 5, 1, 5, 1]))
        self.assertEqual(detect_width(profile, 8)[0], 2)

    def test_highest_peak_wins(self):
        profile = AutocorrProfile(values=np.array([10.0, 1, 3, 1, 6, 1, 2, 1, 9, 1]))
        self.assertEqual(detect_width(profile, 16)[0], 8)


class EnumerateShapesTests(SimpleTestCase):
    def test_square(self):
        self.assertEqual(enumerate_shapes(2048, 8, 1.0), [(32, 8, 8)])

    def test_aspect(self):
        self.assertEqual(enumerate_shapes(512, 8, 0.5), [(16, 4, 8)])

    def test_width_must_divide(self):
        with self.assertRaises(NoValidFactorization):
            enumerate_shapes(100, 7, 1.0)

    def test_ranked_alternatives(self):
        candidates = enumerate_shapes(120, 4, 1.0)
        self.assertEqual(candidates, [(10, 3, 4), (6, 5, 4), (15, 2, 4)])
        for c, h, w in candidates:
            self.assertEqual(c * h * w, 120)

    def test_invalid_aspect(self):
        with self.assertRaises(InvalidConfig):
            enumerate_shapes(64, 4, 0.0)


class EstimateShapeTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, rows, name='capture.slkx'):
        path = os.path.join(self.tmp.name, name)
        write_capture(path, rows)
        return path

    def test_probe_capture_end_to_end(self):
        estimate = estimate_shape(self._write(probe_capture(8, 8, 512, seed=0)))
        self.assertEqual(estimate.width, 8)
        self.assertEqual(estimate.shape, (8, 8, 8))
        self.assertEqual((estimate.n, estimate.d), (512, 512))
        self.assertEqual(estimate.profile.k_max, 511)

    def test_exactness_grid(self):
        for channels in (4, 8, 16):
            for width in (4, 8, 16):
                with self.subTest(channels=channels, width=width):
                    estimate = estimate_from_matrix(probe_capture(channels, width, 512, seed=0))
                    self.assertEqual(estimate.width, width)
                    self.assertIn((channels, width, width), estimate.candidates)
                    self.assertEqual(estimate.shape, (channels, width, width))

    def test_tiny_capture_never_crashes(self):
        try:
            estimate_from_matrix(probe_capture(8, 8, 2, seed=0))
        except StageError as e:
            self.assertIn(e.stage, ('autocorrelation', 'width', 'factorization'))

    def test_constant_capture_is_degenerate(self):
        with self.assertRaises(StageError) as ctx:
            estimate_shape(self._write(np.ones((16, 64), dtype=np.float32)))
        self.assertEqual(ctx.exception.stage, 'autocorrelation')
        self.assertIsInstance(ctx.exception.cause, DegenerateSignal)

    def test_constant_binary64_capture_is_degenerate(self):
        for n in (3, 64, 512):
            with self.subTest(n=n):
                with self.assertRaises(StageError) as ctx:
                    estimate_from_matrix(np.full((n, 64), 0.1))
                self.assertEqual(ctx.exception.stage, 'autocorrelation')
                self.assertIsInstance(ctx.exception.cause, DegenerateSignal)

    def test_single_row_capture(self):
        with self.assertRaises(StageError) as ctx:
            estimate_shape(self._write(np.ones((1, 64), dtype=np.float32)))
        self.assertIsInstance(ctx.exception.cause, TooFewSamples)

    def test_missing_file(self):
        with self.assertRaises(StageError) as ctx:
            estimate_shape(os.path.join(self.tmp.name, 'missing.slkx'))
        self.assertEqual(ctx.exception.stage, 'read')

    def test_reports(self):
        X = probe_capture(4, 8, 128, seed=7)
        estimate = estimate_from_matrix(X, k_max=32)
        profile_path = os.path.join(self.tmp.name, 'profile.csv')
        heatmap_path = os.path.join(self.tmp.name, 'heatmap.csv')
        write_profile_csv(estimate.profile, profile_path)
        write_heatmap_csv(covariance_block(X, 0, 16), heatmap_path)

        with open(profile_path, newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], PROFILE_COLUMNS)
        self.assertEqual(len(rows), 33)
        self.assertEqual(float(rows[8][0]), 8)
        with open(heatmap_path, newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(len(rows), 16)
        self.assertTrue(all(len(row) == 16 for row in rows))

    def test_parse_block(self):
        self.assertEqual(parse_block('4:20'), (4, 20))
        with self.assertRaises(InvalidConfig):
            parse_block('4-20')

    @unittest.skipUnless(RUN_SLOW, 'set SPLITLEAK_RUN_SLOW=1 for estimation on sniffed classifier features')
    def test_sniffed_tinyvgg_features(self):
        split = split_at(build_model(get_preset('tinyvgg', input_size=32), seed=0), 6)
        self.assertEqual(split.feature_shape, (32, 8, 8))
        deployment = SimulatedDeployment(split, 'none', tap=True)
        client = deployment.open_session()
        for image in synth_dataset(512, image_shape=(3, 32, 32), seed=0, stream='probe').images:
            client.infer(image)
        estimate = estimate_shape(self._write(deployment.sniffer.capture()))
        self.assertEqual(estimate.width, 8)
