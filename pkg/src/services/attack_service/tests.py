import math
import os
import tempfile
import unittest

import torch
from django.conf import settings
from django.test import SimpleTestCase

from src.services.model_zoo_service.models import build_model
from src.services.model_zoo_service.specs import ModelSpec, affine, conv, flatten, maxpool, relu
from src.services.model_zoo_service.training import predict_labels
from src.shared.datasets import ImageDataset
from src.shared.exceptions import DatasetEmpty, FeedbackUnavailable, InvalidConfig
from .norms import clip_to_image, lp_norm, normalize, project
from .oracles import ModelOracle, Response, TargetOracle, margin_loss
from .query_attacks import (
    AttackResult, QuerySession, estimate_gradient, gfcs, rgf_estimate, rgf_family, sample_directions, simba_ods,
)
from .reports import RESULT_COLUMNS, write_results_csv
from .serializers import AttackConfig
from .sweep import run_attack_sweep, sr_at_budget
from .whitebox import evaluate_transfer, ods_direction, pgd, surrogate_gradient

F64 = torch.float64


def _spec(classes=3):
    return ModelSpec(
        name='tiny',
        input_shape=(3, 8, 8),
        layers=(conv(3, 4), relu(), maxpool(), flatten(), affine(64, classes)),
        class_count=classes,
    )


def _images(count, seed=0):
    return 0.25 + 0.5 * torch.rand(count, 3, 8, 8, generator=torch.Generator().manual_seed(seed))


def _cosine(a, b):
    a, b = a.reshape(-1).to(F64), b.reshape(-1).to(F64)
    return float(a @ b / (a.norm() * b.norm()))


def _correct_dataset(target, count=6, seed=0):
    """Samples labelled with the target's own predictions, so every one is attacked"""
    images = _images(count, seed)
    oracle = ModelOracle(target)
    labels = [oracle.query(images[i:i + 1]).label for i in range(count)]
    return ImageDataset(images, labels, name='attack', class_count=3)


class RecordingOracle(ModelOracle):
    """Keeps a copy of every input it is asked about"""

    def __init__(self, model, feedback='score'):
        super().__init__(model, feedback)
        self.points = []

    def respond(self, x):
        self.points.append(x.detach().clone())
        return super().respond(x)


class FooledFromOracle(RecordingOracle):
    """Reports a wrong label from query number `first` on"""

    def __init__(self, model, first):
        super().__init__(model)
        self.first = first

    def respond(self, x):
        response = super().respond(x)
        if self.queries >= self.first:
            response.label = (response.label + 1) % response.probs.shape[0]
        return response


class NormTests(SimpleTestCase):
    def test_project_examples(self):
        v = torch.tensor([3.0, 4.0])
        self.assertTrue(torch.allclose(project(v, 1.0, 2), torch.tensor([0.6, 0.8])))
        self.assertTrue(torch.equal(project(v, 10.0, 2), v))
        self.assertTrue(torch.equal(project(v, 1.0, math.inf), torch.tensor([1.0, 1.0])))
        self.assertTrue(torch.equal(project(v, math.inf, 2), v))

    def test_projection_stays_in_ball(self):
        generator = torch.Generator().manual_seed(3)
        for _ in range(100):
            v = torch.randn(2, 3, 5, 5, generator=generator, dtype=F64) * 3
            eps = float(torch.rand(1, generator=generator)) * 2
            for p in (2, math.inf):
                self.assertTrue((lp_norm(project(v, eps, p), p) <= eps + 1e-9).all())

    def test_normalize_and_clip(self):
        v = torch.tensor([[0.0, -2.0, 0.5]])
        self.assertTrue(torch.equal(normalize(v, math.inf), torch.tensor([[0.0, -1.0, 1.0]])))
        self.assertAlmostEqual(float(lp_norm(normalize(v, 2), 2)[0]), 1.0, places=6)
        x = torch.tensor([0.9, 0.1])
        self.assertTrue(torch.allclose(x + clip_to_image(x, torch.tensor([0.5, -0.5])), torch.tensor([1.0, 0.0])))


class AttackConfigTests(SimpleTestCase):
    def test_defaults_and_steps(self):
        cfg = AttackConfig.create(eps='1.0', iterations=4)
        self.assertEqual(cfg.norm, 2)
        self.assertEqual(cfg.query_budget, 100)
        self.assertAlmostEqual(cfg.step, 1.0)
        linf = AttackConfig.create(norm='inf', eps='8/255', iterations=20)
        self.assertAlmostEqual(linf.step, 2.5 * (8 / 255) / 20)
        self.assertAlmostEqual(AttackConfig.create(eps='inf').step, 0.1)
        self.assertEqual(AttackConfig.create(eps=0.5, step_size=0.2).step, 0.2)

    def test_numeric_norm_and_eps(self):
        cfg = AttackConfig.create(norm=math.inf, eps=0.25)
        self.assertTrue(math.isinf(cfg.norm))
        self.assertEqual(cfg.eps, 0.25)
        self.assertEqual(cfg.replace(query_budget=5).query_budget, 5)

    def test_invalid(self):
        for bad in ({'norm': '3'}, {'eps': '-1'}, {'eps': '1/0'}, {'prior_weight': 1.5},
                    {'rgf_sigma': 0}, {'step_size': -1}, {'method': 'nope'}, {'query_budget': 0}):
            with self.assertRaises(InvalidConfig):
                AttackConfig.create(**bad)


class OracleTests(SimpleTestCase):
    def test_counts_and_feedback(self):
        model = build_model(_spec(), seed=1)
        oracle = ModelOracle(model)
        response = oracle.query(_images(1))
        self.assertEqual(oracle.queries, 1)
        self.assertAlmostEqual(float(response.probs.sum()), 1.0, places=5)
        self.assertEqual(response.label, int(torch.argmax(response.probs)))
        self.assertIsNone(ModelOracle(model, 'hard').query(_images(1)).probs)
        with self.assertRaises(FeedbackUnavailable):
            ModelOracle(model, 'none')

    def test_margin_loss(self):
        response = Response(label=0, probs=torch.tensor([0.5, 0.3, 0.2]))
        self.assertAlmostEqual(margin_loss(response, 0), math.log(0.5 / 0.3), places=6)
        self.assertLess(margin_loss(response, 2), 0)
        with self.assertRaises(FeedbackUnavailable):
            margin_loss(Response(label=0), 0)


class WhiteboxTests(SimpleTestCase):
    def setUp(self):
        self.surrogate = build_model(_spec(), seed=2)
        self.x = _images(2)
        self.y = predict_labels(self.surrogate, self.x)

    def test_zero_radius_is_identity(self):
        for norm in ('2', 'inf'):
            cfg = AttackConfig.create(norm=norm, eps='0', iterations=5)
            self.assertTrue(torch.equal(pgd(self.surrogate, self.x, self.y, cfg), self.x))

    def test_single_step_is_fgsm(self):
        eps = 0.03
        cfg = AttackConfig.create(norm='inf', eps=eps, iterations=1, step_size=eps)
        grad = surrogate_gradient(self.surrogate, self.x, self.y)
        expected = (self.x + eps * torch.sign(grad)).clamp(0, 1)
        self.assertTrue(torch.allclose(pgd(self.surrogate, self.x, self.y, cfg), expected, atol=1e-6))

    def test_linf_bound(self):
        for k, step in ((1, 0.01), (3, 0.01), (20, 0.01)):
            cfg = AttackConfig.create(norm='inf', eps=0.05, iterations=k, step_size=step)
            delta = pgd(self.surrogate, self.x, self.y, cfg) - self.x
            self.assertTrue((lp_norm(delta, math.inf) <= min(k * step, 0.05) + 1e-6).all())
            adversarial = self.x + delta
            self.assertTrue(((adversarial >= 0) & (adversarial <= 1)).all())

    def test_l2_bound(self):
        cfg = AttackConfig.create(norm='2', eps=0.5, iterations=10)
        delta = pgd(self.surrogate, self.x, self.y, cfg) - self.x
        self.assertTrue((lp_norm(delta, 2) <= 0.5 + 1e-5).all())

    def test_ods_direction(self):
        x = self.x[:1]
        a = ods_direction(self.surrogate, x, seed=1)
        self.assertAlmostEqual(float(lp_norm(a, 2)[0]), 1.0, places=5)
        self.assertTrue(torch.equal(a, ods_direction(self.surrogate, x, seed=1)))
        self.assertFalse(torch.equal(a, ods_direction(self.surrogate, x, seed=2)))

    def test_evaluate_transfer_counts_errors(self):
        images = _images(5, seed=4)
        labels = predict_labels(self.surrogate, images).clone()
        labels[0] = (labels[0] + 1) % 3
        labels[3] = (labels[3] + 1) % 3
        self.assertAlmostEqual(evaluate_transfer(self.surrogate, images, labels), 2 / 5)
        with self.assertRaises(DatasetEmpty):
            evaluate_transfer(self.surrogate, images[:0], labels[:0])


class GradientEstimateTests(SimpleTestCase):
    def test_linear_loss_direction(self):
        generator = torch.Generator().manual_seed(0)
        d, estimates, q = 8, 10_000, 16
        g = torch.randn(d, generator=generator, dtype=F64)
        directions = torch.randn(estimates * q, d, generator=generator, dtype=F64)
        directions = directions / directions.norm(dim=1, keepdim=True)
        sigma = 1e-3
        losses = sigma * (directions @ g)
        mean = torch.zeros(d, dtype=F64)
        for chunk in range(0, estimates * q, q * 1000):
            rows = slice(chunk, chunk + q * 1000)
            mean += rgf_estimate(0.0, losses[rows], directions[rows], sigma)
        self.assertGreater(_cosine(mean, g), 0.99)

    def test_quadratic_loss_direction(self):
        generator = torch.Generator().manual_seed(1)
        a = torch.tensor([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]], dtype=F64)
        b = torch.tensor([0.4, -0.2, 0.7], dtype=F64)
        point = torch.tensor([0.1, 0.5, -0.3], dtype=F64)

        def loss(v):
            return float(0.5 * v @ a @ v + b @ v)

        total = torch.zeros(3, dtype=F64)
        for _ in range(20):
            directions = torch.randn(64, 3, generator=generator, dtype=F64)
            directions = directions / directions.norm(dim=1, keepdim=True)
            total += estimate_gradient(loss, point, directions, 1e-4)
        self.assertGreater(_cosine(total, a @ point + b), 0.9)

    def test_quadratic_loss_with_sampled_directions(self):
        a = torch.diag(torch.linspace(0.5, 2.0, 12, dtype=F64))
        b = torch.linspace(-0.6, 0.6, 12, dtype=F64)
        point = torch.full((1, 3, 2, 2), 0.3, dtype=F64)

        def loss(v):
            v = v.reshape(-1)
            return float(0.5 * v @ a @ v + b @ v)

        cfg = AttackConfig.create(rgf_samples=64, rgf_sigma=1e-4)
        session = QuerySession(TargetOracle(), None, point, 0, cfg)
        generator = torch.Generator().manual_seed(4)
        total = torch.zeros_like(point)
        for _ in range(10):
            directions = sample_directions('rgf', cfg.rgf_samples, session, generator)
            self.assertEqual(directions.shape, (64, 1, 3, 2, 2))
            total += estimate_gradient(loss, point, directions, cfg.rgf_sigma)
        self.assertGreater(_cosine(total, a @ point.reshape(-1) + b), 0.9)


class QueryAttackTests(SimpleTestCase):
    def setUp(self):
        self.target = build_model(_spec(), seed=5)
        self.surrogate = build_model(_spec(), seed=6)
        self.dataset = _correct_dataset(self.target, count=4, seed=7)

    def _sample(self, i=0):
        return self.dataset.images[i:i + 1], int(self.dataset.labels[i])

    def test_single_query_budget(self):
        x, y = self._sample()
        cfg = AttackConfig.create(eps='1.0', query_budget=1)
        for attack in (simba_ods, gfcs, rgf_family):
            oracle = ModelOracle(self.target)
            result = attack(oracle, self.surrogate, x, y, cfg, sample_id=0)
            self.assertLessEqual(result.queries, 1)
            self.assertEqual(oracle.queries, result.queries)

    def test_zero_radius_fails_after_one_query(self):
        x, y = self._sample()
        cfg = AttackConfig.create(eps='0', query_budget=50)
        for attack in (simba_ods, gfcs, rgf_family):
            result = attack(ModelOracle(self.target), self.surrogate, x, y, cfg, sample_id=0)
            self.assertFalse(result.success)
            self.assertEqual(result.queries, 1)
            self.assertTrue(torch.equal(result.adversarial, x))

    def test_budget_and_ball_respected(self):
        cfg = AttackConfig.create(eps='0.5', query_budget=30, rgf_samples=4)
        for attack in (simba_ods, gfcs, rgf_family):
            for i in range(len(self.dataset)):
                x, y = self._sample(i)
                oracle = ModelOracle(self.target)
                result = attack(oracle, self.surrogate, x, y, cfg, sample_id=i)
                self.assertLessEqual(result.queries, 30)
                self.assertEqual(oracle.queries, result.queries)
                self.assertLessEqual(result.l2, 0.5 + 1e-5)
                self.assertTrue(((result.adversarial >= 0) & (result.adversarial <= 1)).all())
                if result.success:
                    self.assertNotEqual(ModelOracle(self.target).query(result.adversarial).label, y)

    def test_rgf_accounting(self):
        q = 4
        cfg = AttackConfig.create(eps='1.0', query_budget=30, rgf_samples=q)
        for variant in ('rgf', 'p_rgf', 'ods_rgf'):
            x, y = self._sample(1)
            result = rgf_family(ModelOracle(self.target), self.surrogate, x, y, cfg, variant=variant, sample_id=1)
            steps = result.trace[-1]['steps']
            if result.success and result.trace[-2]['source'] == f'{variant}-sample':
                self.assertGreater(result.queries, 1 + steps * (q + 1))
                self.assertLessEqual(result.queries, 1 + steps * (q + 1) + q)
            else:
                self.assertEqual(result.queries, 1 + steps * (q + 1))

    def test_rgf_sampling_queries_stay_in_box_and_ball(self):
        x = (torch.rand(1, 3, 8, 8, generator=torch.Generator().manual_seed(11)) > 0.5).to(torch.float32)
        y = ModelOracle(self.target).query(x).label
        cfg = AttackConfig.create(eps='0.5', query_budget=40, rgf_samples=4, rgf_sigma=0.2)
        for variant in ('rgf', 'p_rgf', 'ods_rgf'):
            oracle = RecordingOracle(self.target)
            result = rgf_family(oracle, self.surrogate, x, y, cfg, variant=variant, sample_id=0)
            self.assertEqual(len(oracle.points), result.queries)
            for point in oracle.points:
                self.assertTrue(((point >= 0) & (point <= 1)).all())
                self.assertLessEqual(float(lp_norm(point - x, 2).max()), 0.5 + 1e-5)

    def test_rgf_stops_on_fooling_sampling_query(self):
        x, y = self._sample(1)
        cfg = AttackConfig.create(eps='1.0', query_budget=30, rgf_samples=4)
        for variant in ('rgf', 'p_rgf', 'ods_rgf'):
            oracle = FooledFromOracle(self.target, first=3)
            result = rgf_family(oracle, self.surrogate, x, y, cfg, variant=variant, sample_id=1)
            self.assertTrue(result.success)
            self.assertEqual(result.queries, 3)
            self.assertEqual(oracle.queries, 3)
            self.assertTrue(torch.equal(result.adversarial, oracle.points[2]))
            self.assertEqual(result.trace[-2]['source'], f'{variant}-sample')
            self.assertEqual(result.trace[-1]['steps'], 0)

    def test_prior_weight_zero_matches_rgf(self):
        cfg = AttackConfig.create(eps='1.0', query_budget=40, rgf_samples=4, prior_weight=0.0)
        x, y = self._sample(2)
        plain = rgf_family(ModelOracle(self.target), self.surrogate, x, y, cfg, variant='rgf', sample_id=2)
        prior = rgf_family(ModelOracle(self.target), self.surrogate, x, y, cfg, variant='p_rgf', sample_id=2)
        self.assertEqual(plain.queries, prior.queries)
        self.assertTrue(torch.equal(plain.adversarial, prior.adversarial))

    def test_rgf_needs_scores(self):
        x, y = self._sample()
        with self.assertRaises(FeedbackUnavailable):
            rgf_family(ModelOracle(self.target, 'hard'), self.surrogate, x, y, AttackConfig.create())
        with self.assertRaises(InvalidConfig):
            rgf_family(ModelOracle(self.target), None, x, y, AttackConfig.create(), variant='p_rgf')

    def test_hard_feedback_runs_on_labels(self):
        x, y = self._sample()
        cfg = AttackConfig.create(eps='1.0', query_budget=20, feedback='hard')
        for attack in (simba_ods, gfcs):
            result = attack(ModelOracle(self.target, 'hard'), self.surrogate, x, y, cfg, sample_id=0)
            self.assertLessEqual(result.queries, 20)

    def test_gfcs_tracks_direction_sources(self):
        x, y = self._sample(3)
        result = gfcs(ModelOracle(self.target), self.surrogate, x, y, AttackConfig.create(query_budget=40), sample_id=3)
        self.assertGreaterEqual(result.gradient_steps, 1)
        sources = {entry['source'] for entry in result.trace}
        self.assertTrue(sources <= {'clean', 'gradient', 'ods'})
        if result.gradient_steps + result.ods_steps:
            self.assertGreaterEqual(result.fallback_rate, 0.0)
            self.assertLessEqual(result.fallback_rate, 1.0)

    def test_deterministic(self):
        x, y = self._sample(1)
        cfg = AttackConfig.create(eps='1.0', query_budget=25, seed=9)
        first = simba_ods(ModelOracle(self.target), self.surrogate, x, y, cfg, sample_id=1)
        second = simba_ods(ModelOracle(self.target), self.surrogate, x, y, cfg, sample_id=1)
        self.assertEqual(first.queries, second.queries)
        self.assertTrue(torch.equal(first.adversarial, second.adversarial))


class SweepTests(SimpleTestCase):
    def setUp(self):
        self.target = build_model(_spec(), seed=5)
        self.surrogate = build_model(_spec(), seed=6)

    def test_all_failures(self):
        dataset = _correct_dataset(self.target, count=3, seed=8)
        cfg = AttackConfig.create(eps='0', query_budget=10)
        summary = run_attack_sweep('gfcs', ModelOracle(self.target), self.surrogate, dataset, cfg).summary()
        self.assertEqual(summary.attacked, 3)
        self.assertEqual(summary.success_rate, 0.0)
        self.assertIsNone(summary.avg_queries)
        self.assertIsNone(summary.avg_l2)

    def test_misclassified_samples_excluded(self):
        dataset = _correct_dataset(self.target, count=4, seed=8)
        dataset.labels[1] = (dataset.labels[1] + 1) % 3
        sweep = run_attack_sweep('simba-ods', ModelOracle(self.target), self.surrogate, dataset,
                                 AttackConfig.create(query_budget=15))
        summary = sweep.summary()
        self.assertEqual(summary.excluded, 1)
        self.assertEqual(summary.attacked, 3)
        self.assertFalse(sweep.results[1].initially_correct)
        self.assertTrue(all(r.queries <= 15 for r in sweep.results))

    def test_pgd_charges_no_queries(self):
        dataset = _correct_dataset(self.target, count=3, seed=9)
        cfg = AttackConfig.create(method='pgd', norm='inf', eps='8/255')
        sweep = run_attack_sweep('pgd', ModelOracle(self.target), self.surrogate, dataset, cfg)
        self.assertTrue(all(r.queries == 0 for r in sweep.results))
        self.assertIsNone(sweep.summary().avg_queries)

    def test_bookkeeping_over_a_hundred_samples(self):
        dataset = _correct_dataset(self.target, count=100, seed=12)
        cfg = AttackConfig.create(eps='0.5', query_budget=12, rgf_samples=3)
        for method in ('simba-ods', 'gfcs', 'rgf'):
            sweep = run_attack_sweep(method, ModelOracle(self.target), self.surrogate, dataset, cfg)
            self.assertEqual(len(sweep.results), 100)
            for result in sweep.results:
                self.assertLessEqual(result.queries, 12)
                self.assertLessEqual(result.l2, 0.5 + 1e-5)
                self.assertTrue(((result.adversarial >= 0) & (result.adversarial <= 1)).all())

    def test_unknown_method(self):
        dataset = _correct_dataset(self.target, count=1)
        with self.assertRaises(InvalidConfig):
            run_attack_sweep('square', ModelOracle(self.target), self.surrogate, dataset, AttackConfig.create())

    def test_sr_at_budget_is_monotone(self):
        results = [
            AttackResult(success=True, queries=3),
            AttackResult(success=True, queries=12),
            AttackResult(success=False, queries=100),
            AttackResult(success=True, queries=40),
            AttackResult(initially_correct=False),
        ]
        curve = [sr_at_budget(results, b) for b in (1, 5, 25, 50, 100)]
        self.assertEqual(curve, [0.0, 0.25, 0.5, 0.75, 0.75])
        self.assertIsNone(sr_at_budget([], 10))

    def test_results_csv(self):
        results = [AttackResult(sample_id=4, success=True, queries=7, l2=0.5, linf=0.125)]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'results.csv')
            write_results_csv(results, path)
            with open(path) as f:
                lines = f.read().splitlines()
        self.assertEqual(lines[0], ','.join(RESULT_COLUMNS))
        self.assertEqual(lines[1], '4,1,7,0.5,0.125,1')


@unittest.skipUnless(settings.SPLITLEAK_RUN_SLOW, 'set SPLITLEAK_RUN_SLOW=1 for paired attack sweeps')
class PairedSweepTests(SimpleTestCase):
    """Paired runs on one target: the matched surrogate is the target itself"""

    def setUp(self):
        self.target = build_model(_spec(), seed=5)
        self.dataset = _correct_dataset(self.target, count=20, seed=13)

    def _sweep(self, method, surrogate, **overrides):
        values = {'eps': '0.5', 'query_budget': 200, 'seed': 1}
        values.update(overrides)
        return run_attack_sweep(method, ModelOracle(self.target), surrogate, self.dataset, AttackConfig.create(**values))

    def _mean_queries(self, sweep):
        return sum(r.queries for r in sweep.attacked) / len(sweep.attacked)

    def test_gfcs_needs_fewer_queries_with_matched_surrogate(self):
        gfcs_sweep = self._sweep('gfcs', self.target)
        simba_sweep = self._sweep('simba-ods', self.target)
        self.assertLess(self._mean_queries(gfcs_sweep), self._mean_queries(simba_sweep))
        self.assertGreaterEqual(gfcs_sweep.summary().success_rate, simba_sweep.summary().success_rate)

    def test_randomized_surrogate_falls_back_more(self):
        matched = self._sweep('gfcs', self.target).summary()
        randomized = self._sweep('gfcs', build_model(_spec(), seed=99)).summary()
        self.assertGreater(randomized.fallback_rate, matched.fallback_rate)

    def test_simba_matches_whitebox_pgd(self):
        overrides = {'eps': '2.0', 'query_budget': 500}
        simba = self._sweep('simba-ods', self.target, **overrides).summary()
        whitebox = self._sweep('pgd', self.target, **overrides).summary()
        self.assertGreaterEqual(simba.success_rate, whitebox.success_rate)
