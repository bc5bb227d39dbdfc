import os
import tempfile

import torch
from django.test import SimpleTestCase

from src.services.autograd_service.gradcheck import grad_check
from src.services.autograd_service.losses import kl_divergence, mse, softmax_cross_entropy
from src.services.experiments_service.datasets import synth_dataset
from src.services.model_zoo_service.checkpoints import load_checkpoint, save_checkpoint
from src.services.model_zoo_service.models import build_model, count_parameters
from src.services.model_zoo_service.specs import ModelSpec, affine, conv, flatten, get_preset, maxpool, relu
from src.services.model_zoo_service.split import split_at
from src.services.wire_service.deployment import SimulatedDeployment
from src.shared.constants import DISTILLATION_DEFAULTS
from src.shared.exceptions import (
    BadMagic, ChecksumMismatch, DatasetEmpty, DivergedLoss, InconsistentDim, InvalidConfig,
    InvalidSplitPoint, MissingSupervision, ShapeEstimateMissing, Truncated,
)
from .adaptation import build_decoder, build_encoder, scale_plan
from .distillation import distillation_loss, train_surrogate
from .models import assemble_surrogate, baseline_surrogate
from .queries import (
    QueryDataset, QueryLog, build_query_dataset, collect_queries, decode_query_log,
    encode_query_log, read_query_log, write_query_log,
)
from .serializers import DistillationConfig

F64 = torch.float64
SHAPES = [(16, 4, 4), (8, 8, 8), (32, 2, 2), (4, 16, 16), (3, 5, 7)]


def _rand(shape, seed, dtype=torch.float32):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)


def _tiny_spec():
    return ModelSpec(
        name='tiny',
        input_shape=(3, 4, 4),
        layers=(conv(3, 4), relu(), maxpool(), flatten(), affine(16, 3)),
        class_count=3,
    )


def _query_batch(count=4, feature_shape=(16, 8, 8), classes=10, seed=0, dtype=torch.float32):
    logits = _rand((count, classes), seed + 1, dtype) * 4
    probs = torch.softmax(logits, dim=1)
    return QueryDataset(
        inputs=_rand((count, 3, 16, 16), seed),
        features=_rand((count, *feature_shape), seed + 2, dtype),
        probs=probs,
        hard=torch.argmax(probs, dim=1),
        labels=torch.arange(count) % classes,
    )


class AdaptationTests(SimpleTestCase):
    def test_identity_shape(self):
        encoder = build_encoder((8, 4, 4), (8, 4, 4), seed=0)
        self.assertEqual(encoder.plan, [])
        self.assertEqual(len(encoder.stages), 0)
        self.assertEqual(tuple(encoder(_rand((2, 8, 4, 4), 0)).shape), (2, 8, 4, 4))
        decoder = build_decoder((8, 4, 4), (8, 4, 4), seed=0)
        self.assertEqual(tuple(decoder(_rand((2, 8, 4, 4), 1)).shape), (2, 8, 4, 4))

    def test_two_upscaling_stages(self):
        self.assertEqual(scale_plan((4, 4), (16, 16)), ['up', 'up'])
        encoder = build_encoder((16, 4, 4), (8, 16, 16), seed=0)
        self.assertEqual(encoder.plan, ['up', 'up'])
        self.assertEqual(tuple(encoder(_rand((1, 16, 4, 4), 0)).shape), (1, 8, 16, 16))

    def test_downscaling(self):
        self.assertEqual(scale_plan((16, 16), (4, 4)), ['down', 'down'])
        decoder = build_decoder((4, 16, 16), (32, 2, 2), seed=0)
        self.assertEqual(tuple(decoder(_rand((3, 4, 16, 16), 0)).shape), (3, 32, 2, 2))

    def test_shape_grid(self):
        for src in SHAPES:
            for dst in SHAPES:
                with self.subTest(src=src, dst=dst):
                    encoder = build_encoder(src, dst, seed=3)
                    decoder = build_decoder(dst, src, seed=3)
                    encoded = encoder(_rand((2, *src), 4))
                    self.assertEqual(tuple(encoded.shape[1:]), dst)
                    self.assertEqual(tuple(decoder(encoded).shape[1:]), src)

    def test_invalid_shape(self):
        with self.assertRaises(InvalidConfig):
            build_encoder((0, 4, 4), (8, 4, 4), seed=0)


class SurrogateModelTests(SimpleTestCase):
    def setUp(self):
        self.spec = get_preset('tinyvgg', input_size=16)

    def test_edge_matches_intercepted_shape(self):
        configs = [
            (3, (32, 4, 4)), (3, (16, 8, 8)), (3, (8, 16, 16)), (6, (32, 4, 4)), (6, (64, 2, 2)),
            (6, (3, 5, 7)), (9, (16, 8, 8)), (9, (64, 2, 2)), (12, (32, 4, 4)), (1, (4, 4, 4)),
        ]
        x = _rand((2, 3, 16, 16), 0)
        for index, (split, shape) in enumerate(configs):
            with self.subTest(split=split, shape=shape):
                g = assemble_surrogate(self.spec, split, shape, seed=index)
                self.assertEqual(tuple(g.forward_edge(x).shape[1:]), shape)
                self.assertEqual(g.edge_output_shape, shape)

    def test_zero_input_logits(self):
        g = assemble_surrogate(self.spec, 6, (16, 8, 8), seed=0)
        logits = g(torch.zeros(1, 3, 16, 16))
        self.assertEqual(tuple(logits.shape), (1, 10))
        self.assertTrue(torch.isfinite(logits).all())

    def test_forward_is_cloud_after_edge(self):
        g = assemble_surrogate(self.spec, 6, (16, 8, 8), seed=0)
        x = _rand((3, 3, 16, 16), 1)
        self.assertTrue(torch.equal(g(x), g.forward_cloud(g.forward_edge(x))))

    def test_invalid_split(self):
        for split in (0, len(self.spec.layers)):
            with self.assertRaises(InvalidSplitPoint):
                assemble_surrogate(self.spec, split, (16, 8, 8), seed=0)

    def test_baseline_is_plain_backbone(self):
        g = baseline_surrogate(self.spec, 6, seed=0)
        self.assertFalse(g.adapted)
        self.assertEqual(g.edge_output_shape, (32, 4, 4))
        self.assertEqual(count_parameters(g), count_parameters(build_model(self.spec, 0)))
        x = _rand((2, 3, 16, 16), 2)
        self.assertTrue(torch.equal(g(x), build_model(self.spec, 0)(x)))

    def test_shares_existing_backbone(self):
        backbone = build_model(self.spec, 5)
        g = assemble_surrogate(backbone, 3, (8, 8, 8), seed=5)
        self.assertIs(g.backbone, backbone)

    def test_end_to_end_gradient(self):
        spec = _tiny_spec()
        for seed in range(5):
            with self.subTest(seed=seed):
                g = assemble_surrogate(spec, 2, (2, 8, 8), seed=seed, dtype=F64)
                labels = [seed % 3]
                error = grad_check(lambda t: softmax_cross_entropy(g(t), labels), _rand((1, 3, 4, 4), seed, F64))
                self.assertLess(error, 1e-6)

    def test_checkpoint_round_trip(self):
        g = assemble_surrogate(self.spec, 6, (16, 8, 8), seed=2)
        g.metadata['alpha'] = 0.5
        x = _rand((4, 3, 16, 16), 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'surrogate.slkc')
            save_checkpoint(g, path)
            restored = load_checkpoint(path, expected_kind='surrogate')
        self.assertTrue(restored.adapted)
        self.assertEqual(restored.split_index, 6)
        self.assertEqual(restored.target_feature_shape, (16, 8, 8))
        self.assertEqual(restored.metadata['alpha'], 0.5)
        self.assertTrue(torch.equal(restored(x), g(x)))


class DistillationConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = DistillationConfig.create()
        self.assertEqual((cfg.alpha, cfg.beta), (0.5, 0.5))
        self.assertEqual(cfg.lr, DISTILLATION_DEFAULTS['LR'])
        self.assertEqual(cfg.output_mode, 'score')

    def test_rejects_zero_weights(self):
        with self.assertRaises(InvalidConfig):
            DistillationConfig.create(alpha=0.0, beta=0.0)

    def test_rejects_bad_values(self):
        for bad in ({'lr': 0.0}, {'alpha': -1.0}, {'output_mode': 'logits'}, {'batch_size': 0}):
            with self.subTest(**bad), self.assertRaises(InvalidConfig):
                DistillationConfig.create(**bad)

    def test_replace(self):
        cfg = DistillationConfig.create().replace(alpha=DISTILLATION_DEFAULTS['ALPHA_QUERY_PHASE'])
        self.assertEqual(cfg.alpha, 0.1)
        self.assertEqual(cfg.beta, 0.5)


class DistillationLossTests(SimpleTestCase):
    def setUp(self):
        self.g = assemble_surrogate(get_preset('tinyvgg'), 6, (16, 8, 8), seed=0)
        self.batch = _query_batch()

    def test_decomposition(self):
        cfg = DistillationConfig.create(alpha=0.3, beta=0.7)
        loss = distillation_loss(self.g, self.batch, cfg)
        self.assertEqual(float(loss.total), float(cfg.alpha * loss.features + cfg.beta * loss.output))

        with torch.no_grad():
            edge = self.g.forward_edge(self.batch.inputs)
            expected_features = mse(self.batch.features, edge)
            expected_output = kl_divergence(self.batch.probs, self.g.forward_cloud(edge))
        self.assertAlmostEqual(float(loss.features), float(expected_features), places=5)
        self.assertAlmostEqual(float(loss.output), float(expected_output), places=5)

    def test_alpha_zero_is_output_distillation(self):
        cfg = DistillationConfig.create(alpha=0.0, beta=0.5)
        loss = distillation_loss(self.g, self.batch, cfg)
        self.assertIsNone(loss.features)
        self.assertEqual(float(loss.total), float(0.5 * loss.output))

    def test_beta_zero_with_matching_features(self):
        with torch.no_grad():
            self.batch.features = self.g.forward_edge(self.batch.inputs).clone()
        loss = distillation_loss(self.g, self.batch, DistillationConfig.create(alpha=1.0, beta=0.0))
        self.assertIsNone(loss.output)
        self.assertEqual(float(loss.total), 0.0)

    def test_modes(self):
        for mode, expected in (('hard', self.batch.hard), ('label', self.batch.labels)):
            with self.subTest(mode=mode):
                loss = distillation_loss(self.g, self.batch, DistillationConfig.create(alpha=0.0, beta=1.0, output_mode=mode))
                with torch.no_grad():
                    reference = softmax_cross_entropy(self.g(self.batch.inputs), expected)
                self.assertAlmostEqual(float(loss.total), float(reference), places=5)

    def test_one_hot_scores_match_hard_labels(self):
        g = assemble_surrogate(get_preset('tinyvgg'), 6, (16, 8, 8), seed=1, dtype=F64)
        batch = _query_batch(dtype=F64)
        batch.probs = torch.nn.functional.one_hot(batch.hard, 10).to(F64)
        score = distillation_loss(g, batch, DistillationConfig.create(alpha=0.0, beta=1.0, output_mode='score'))
        hard = distillation_loss(g, batch, DistillationConfig.create(alpha=0.0, beta=1.0, output_mode='hard'))
        self.assertLess(abs(float(score.total) - float(hard.total)), 1e-6)

    def test_missing_supervision(self):
        self.batch.probs = None
        with self.assertRaises(MissingSupervision):
            distillation_loss(self.g, self.batch, DistillationConfig.create(output_mode='score'))
        self.batch.features = None
        with self.assertRaises(MissingSupervision):
            distillation_loss(self.g, self.batch, DistillationConfig.create(alpha=1.0, beta=0.0))


class QueryCollectionTests(SimpleTestCase):
    def setUp(self):
        self.split = split_at(build_model(get_preset('tinyvgg', input_size=16), seed=1), 6)
        self.inputs = synth_dataset(100, seed=0, stream='queries')

    def test_score_mode_alignment(self):
        deployment = SimulatedDeployment(self.split, 'score', tap=True)
        client = deployment.open_session()
        dataset = collect_queries(client, deployment.sniffer, self.inputs.images, self.split.feature_shape)

        self.assertEqual(client.query_count, 100)
        self.assertEqual(len(dataset), 100)
        self.assertEqual(dataset.feature_shape, (32, 4, 4))
        self.assertEqual(tuple(dataset.probs.shape), (100, 10))
        self.assertTrue(torch.equal(dataset.hard, torch.argmax(dataset.probs, dim=1)))
        with torch.no_grad():
            for i in (0, 1, 57, 99):
                expected = self.split.edge(self.inputs.images[i:i + 1].to(self.split.dtype)).float()
                self.assertTrue(torch.equal(dataset.features[i:i + 1], expected))

    def test_rows_counted_from_current_capture(self):
        deployment = SimulatedDeployment(self.split, 'hard', tap=True)
        client = deployment.open_session()
        client.infer(self.inputs.images[0])
        dataset = collect_queries(client, deployment.sniffer, self.inputs.images[:10], (32, 4, 4))
        self.assertEqual(len(dataset), 10)
        self.assertIsNone(dataset.probs)
        self.assertEqual(dataset.supervision('hard').shape, (10,))

    def test_none_mode_with_labels(self):
        deployment = SimulatedDeployment(self.split, 'none', tap=True)
        client = deployment.open_session()
        dataset = collect_queries(
            client, deployment.sniffer, self.inputs.images[:20], (32, 4, 4), labels=self.inputs.labels[:20]
        )
        self.assertTrue(torch.equal(dataset.supervision('label'), self.inputs.labels[:20]))
        with self.assertRaises(MissingSupervision):
            dataset.supervision('score')

    def test_short_capture(self):
        log = QueryLog(inputs=self.inputs.images[:10])
        rows = torch.zeros(9, 512).numpy()
        with self.assertRaises(InconsistentDim):
            build_query_dataset(log, rows, (32, 4, 4))
        with self.assertRaises(InconsistentDim):
            build_query_dataset(log, torch.zeros(10, 500).numpy(), (32, 4, 4))

    def test_estimate_required(self):
        deployment = SimulatedDeployment(self.split, 'score', tap=True)
        client = deployment.open_session()
        with self.assertRaises(ShapeEstimateMissing):
            collect_queries(client, deployment.sniffer, self.inputs.images[:3], None)
        self.assertEqual(client.query_count, 0)


class QueryLogFileTests(SimpleTestCase):
    def setUp(self):
        probs = torch.softmax(_rand((6, 10), 1), dim=1)
        self.log = QueryLog(
            inputs=_rand((6, 3, 16, 16), 0),
            probs=probs,
            hard=torch.argmax(probs, dim=1),
            labels=torch.tensor([0, 1, 2, 3, 4, 5]),
        )

    def test_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'queries.slkq')
            write_query_log(path, self.log)
            restored = read_query_log(path)
        self.assertTrue(torch.equal(restored.inputs, self.log.inputs))
        self.assertTrue(torch.equal(restored.probs, self.log.probs))
        self.assertTrue(torch.equal(restored.hard, self.log.hard))
        self.assertTrue(torch.equal(restored.labels, self.log.labels))

    def test_layout(self):
        data = encode_query_log(self.log)
        self.assertEqual(data[:4], b'SLKQ')
        item = 4 * 3 * 16 * 16 + 4 * 10 + 2 + 2
        self.assertEqual(len(data), 27 + 6 * item + 4)
        self.assertEqual(data[26], 0b111)

    def test_inputs_only(self):
        restored = decode_query_log(encode_query_log(QueryLog(inputs=self.log.inputs)))
        self.assertIsNone(restored.probs)
        self.assertIsNone(restored.hard)
        self.assertIsNone(restored.labels)

    def test_corruption(self):
        data = bytearray(encode_query_log(self.log))
        data[100] ^= 0xFF
        with self.assertRaises(ChecksumMismatch):
            decode_query_log(bytes(data))
        with self.assertRaises(Truncated):
            decode_query_log(bytes(data[:-10]))
        with self.assertRaises(BadMagic):
            decode_query_log(b'XXXX' + bytes(data[4:]))

    def test_misaligned_log(self):
        with self.assertRaises(InconsistentDim):
            QueryLog(inputs=self.log.inputs, labels=torch.tensor([1, 2]))


class TrainSurrogateTests(SimpleTestCase):
    def setUp(self):
        split = split_at(build_model(get_preset('tinyvgg', input_size=16), seed=1), 6)
        deployment = SimulatedDeployment(split, 'score', tap=True)
        inputs = synth_dataset(64, seed=0, stream='queries')
        self.dataset = collect_queries(
            deployment.open_session(), deployment.sniffer, inputs.images, split.feature_shape, labels=inputs.labels
        )
        self.spec = get_preset('tinyvgg', input_size=16)
        self.cfg = DistillationConfig.create(lr=DISTILLATION_DEFAULTS['SMOKE_LR'], epochs=8, batch_size=16, seed=0)

    def _train(self, cfg=None, seed=0):
        g = assemble_surrogate(self.spec, 3, self.dataset.feature_shape, seed=seed)
        return g, train_surrogate(g, self.dataset, cfg or self.cfg)

    def test_loss_decreases(self):
        _, result = self._train()
        self.assertEqual(len(result.history), 8)
        self.assertLess(result.history[-1]['total'], result.history[0]['total'])
        self.assertEqual(result.history[0]['epoch'], 1)

    def test_deterministic(self):
        first, a = self._train()
        second, b = self._train()
        self.assertEqual(a.history, b.history)
        for p, q in zip(first.parameters(), second.parameters()):
            self.assertTrue(torch.equal(p, q))

    def test_zero_epochs(self):
        g = assemble_surrogate(self.spec, 3, self.dataset.feature_shape, seed=0)
        before = [p.detach().clone() for p in g.parameters()]
        result = train_surrogate(g, self.dataset, self.cfg.replace(epochs=0))
        self.assertEqual(result.history, [])
        for p, q in zip(before, g.parameters()):
            self.assertTrue(torch.equal(p, q))

    def test_baseline_trains_on_outputs(self):
        g = baseline_surrogate(self.spec, 3, seed=0)
        result = train_surrogate(g, self.dataset, self.cfg.replace(alpha=0.0, epochs=2))
        self.assertEqual(result.history[-1]['features'], 0.0)
        self.assertEqual(g.metadata['alpha'], 0.0)

    def test_empty_dataset(self):
        g = assemble_surrogate(self.spec, 3, (32, 4, 4), seed=0)
        with self.assertRaises(DatasetEmpty):
            train_surrogate(g, self.dataset.subset([]), self.cfg)

    def test_divergence(self):
        with self.assertRaises(DivergedLoss):
            self._train(self.cfg.replace(lr=1e30, epochs=3, batch_size=4))
