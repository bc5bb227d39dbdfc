import os
import struct
import tempfile

import torch
from django.test import SimpleTestCase

from src.shared.datasets import ImageDataset
from src.shared.exceptions import (
    ChecksumMismatch, DatasetEmpty, FormatVersionMismatch, InvalidSpec, InvalidSplitPoint,
)
from .checkpoints import load_checkpoint, save_checkpoint
from .models import build_model
from .specs import ModelSpec, affine, conv, flatten, get_preset, relu, split_after_block
from .split import flatten_features, reshape_features, split_at
from .training import evaluate_accuracy, predict_labels, train_classifier


def _inputs(shape, count, seed):
    return torch.rand(count, *shape, generator=torch.Generator().manual_seed(seed))


def _linear_spec(classes=2, side=4):
    return ModelSpec(
        name='linear',
        input_shape=(1, side, side),
        layers=(flatten(), affine(side * side, classes)),
        class_count=classes,
    )


class ModelSpecTests(SimpleTestCase):
    def test_same_seed_same_parameters(self):
        spec = get_preset('tinyvgg')
        first, second = build_model(spec, 3), build_model(spec, 3)
        for (name, a), (_, b) in zip(first.state_dict().items(), second.state_dict().items()):
            self.assertTrue(torch.equal(a, b), name)

    def test_different_seeds_differ(self):
        spec = get_preset('tinyvgg')
        a = build_model(spec, 1).state_dict()['layers.0.weight']
        b = build_model(spec, 2).state_dict()['layers.0.weight']
        self.assertFalse(torch.equal(a, b))

    def test_biases_start_at_zero(self):
        model = build_model(get_preset('tinyres'), 0)
        for name, param in model.named_parameters():
            if name.endswith('bias'):
                self.assertEqual(float(param.abs().sum()), 0.0)

    def test_mismatched_conv_channels(self):
        spec = ModelSpec(
            name='broken',
            input_shape=(3, 8, 8),
            layers=(conv(3, 8), relu(), conv(4, 8), flatten(), affine(512, 10)),
            class_count=10,
        )
        with self.assertRaises(InvalidSpec) as ctx:
            build_model(spec, 0)
        self.assertEqual(ctx.exception.layer_index, 2)

    def test_missing_flatten(self):
        spec = ModelSpec(name='flat', input_shape=(1, 2, 2), layers=(conv(1, 2),), class_count=2)
        with self.assertRaises(InvalidSpec):
            spec.layer_shapes()

    def test_unknown_preset(self):
        with self.assertRaises(InvalidSpec):
            get_preset('mobilenet')

    def test_tiny_vgg_forward_on_zeros(self):
        model = build_model(get_preset('tinyvgg', input_size=16), 0)
        with torch.no_grad():
            logits = model(torch.zeros(1, 3, 16, 16))
        self.assertEqual(tuple(logits.shape), (1, 10))
        self.assertTrue(torch.isfinite(logits).all())

    def test_spec_dict_round_trip(self):
        spec = get_preset('tinyres', input_size=32)
        self.assertEqual(ModelSpec.from_dict(spec.to_dict()), spec)


class SplitTests(SimpleTestCase):
    def test_split_identity_across_presets(self):
        for preset, size in [('tinyvgg', 16), ('tinyvgg', 32), ('tinyres', 16)]:
            model = build_model(get_preset(preset, input_size=size), 5)
            x = _inputs((3, size, size), 16, 9)
            with torch.no_grad():
                full = model(x)
                for index in model.spec.valid_split_indices:
                    with self.subTest(preset=preset, size=size, split=index):
                        split = split_at(model, index)
                        self.assertTrue(torch.equal(split.cloud(split.edge(x)), full))

    def test_split_at_ends_rejected(self):
        model = build_model(get_preset('tinyvgg'), 0)
        for index in (0, len(model.spec.layers)):
            with self.assertRaises(InvalidSplitPoint):
                split_at(model, index)

    def test_split_after_head_rejected(self):
        model = build_model(get_preset('tinyvgg'), 0)
        with self.assertRaises(InvalidSplitPoint):
            split_at(model, model.spec.flatten_index + 1)

    def test_feature_shape_after_second_block(self):
        for size, expected in [(16, (32, 4, 4)), (32, (32, 8, 8))]:
            spec = get_preset('tinyvgg', input_size=size)
            split = split_at(build_model(spec, 0), split_after_block(spec, 2))
            self.assertEqual(split.feature_shape, expected)
            with torch.no_grad():
                feat = split.edge(torch.zeros(1, 3, size, size))
            self.assertEqual(tuple(feat.shape[1:]), expected)

    def test_edge_and_cloud_share_layers(self):
        model = build_model(get_preset('tinyvgg'), 0)
        split = split_at(model, 6)
        self.assertIs(split.edge.layers[0], model.layers[0])
        self.assertIs(split.cloud.layers[0], model.layers[6])

    def test_flatten_examples(self):
        a, b = 1.5, -2.0
        self.assertEqual(flatten_features(torch.tensor([[[[a]], [[b]]]])).tolist(), [a, b])
        grid = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        self.assertEqual(flatten_features(grid).tolist(), [1.0, 2.0, 3.0, 4.0])

    def test_reshape_inverts_flatten(self):
        for seed in range(10):
            t = torch.randn(1, 3, 4, 5, generator=torch.Generator().manual_seed(seed))
            self.assertTrue(torch.equal(reshape_features(flatten_features(t), (3, 4, 5)), t))


class TrainingTests(SimpleTestCase):
    def _separable(self, count=40):
        generator = torch.Generator().manual_seed(0)
        labels = torch.arange(count) % 2
        images = 0.2 + 0.6 * labels.float().view(-1, 1, 1, 1) + 0.05 * torch.randn(count, 1, 4, 4, generator=generator)
        return ImageDataset(images=images.clamp(0, 1), labels=labels, name='separable', class_count=2)

    def test_learns_separable_set(self):
        model = build_model(_linear_spec(), 0)
        result = train_classifier(model, self._separable(), epochs=20, lr=0.05, seed=0, batch_size=8)
        self.assertLessEqual(len(result.accuracy_history), 20)
        self.assertGreaterEqual(max(result.accuracy_history), 0.95)

    def test_zero_epochs_keeps_parameters(self):
        model = build_model(_linear_spec(), 0)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        result = train_classifier(model, self._separable(), epochs=0, lr=0.05, seed=0)
        self.assertEqual(result.accuracy_history, [])
        for name, value in model.state_dict().items():
            self.assertTrue(torch.equal(value, before[name]))

    def test_same_seed_same_history(self):
        histories = []
        for _ in range(2):
            model = build_model(_linear_spec(), 4)
            histories.append(train_classifier(model, self._separable(), epochs=3, lr=0.01, seed=7).accuracy_history)
        self.assertEqual(histories[0], histories[1])

    def test_empty_dataset(self):
        empty = ImageDataset(images=torch.zeros(0, 1, 4, 4), labels=torch.zeros(0), class_count=2)
        with self.assertRaises(DatasetEmpty):
            train_classifier(build_model(_linear_spec(), 0), empty, epochs=1, lr=0.1, seed=0)
        with self.assertRaises(DatasetEmpty):
            evaluate_accuracy(build_model(_linear_spec(), 0), empty)

    def test_constant_class_zero_model(self):
        model = build_model(_linear_spec(), 0)
        with torch.no_grad():
            model.layers[1].weight.zero_()
            model.layers[1].bias.copy_(torch.tensor([1.0, 0.0]))
        images = torch.rand(6, 1, 4, 4)
        self.assertEqual(evaluate_accuracy(model, ImageDataset(images, torch.zeros(6), class_count=2)), 1.0)
        self.assertEqual(evaluate_accuracy(model, ImageDataset(images, torch.ones(6), class_count=2)), 0.0)

    def test_accuracy_matches_manual_count(self):
        model = build_model(_linear_spec(), 0)
        data = self._separable(20)
        train_classifier(model, data, epochs=2, lr=0.01, seed=1)
        correct = 0
        with torch.no_grad():
            for i in range(20):
                logits = model(data.images[i:i + 1])
                correct += int(int(logits.argmax()) == int(data.labels[i]))
        self.assertEqual(evaluate_accuracy(model, data), correct / 20)

    def test_ties_resolve_to_lowest_class(self):
        model = build_model(_linear_spec(classes=3), 0)
        with torch.no_grad():
            model.layers[1].weight.zero_()
            model.layers[1].bias.zero_()
        self.assertEqual(predict_labels(model, torch.rand(4, 1, 4, 4)).tolist(), [0, 0, 0, 0])


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'model.slkc')

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bit_exact(self):
        model = build_model(get_preset('tinyres'), 11)
        save_checkpoint(model, self.path, metadata={'final_accuracy': 0.5})
        loaded = load_checkpoint(self.path)
        x = _inputs((3, 16, 16), 4, 2)
        with torch.no_grad():
            self.assertTrue(torch.equal(loaded(x), model(x)))
        self.assertEqual(loaded.metadata['final_accuracy'], 0.5)
        self.assertEqual(loaded.spec, model.spec)

    def test_truncated_file(self):
        save_checkpoint(build_model(get_preset('tinyvgg'), 0), self.path)
        with open(self.path, 'rb') as f:
            data = f.read()
        for cut in (3, 20, len(data) // 2, len(data) - 1):
            with open(self.path, 'wb') as f:
                f.write(data[:cut])
            with self.assertRaises((FormatVersionMismatch, ChecksumMismatch)):
                load_checkpoint(self.path)

    def test_flipped_byte(self):
        save_checkpoint(build_model(get_preset('tinyvgg'), 0), self.path)
        with open(self.path, 'rb') as f:
            data = bytearray(f.read())
        data[-10] ^= 0xFF
        with open(self.path, 'wb') as f:
            f.write(bytes(data))
        with self.assertRaises(ChecksumMismatch):
            load_checkpoint(self.path)

    def test_size_follows_layout(self):
        model = build_model(get_preset('tinyvgg'), 0)
        size = save_checkpoint(model, self.path)
        with open(self.path, 'rb') as f:
            data = f.read()
        (header_len,) = struct.unpack_from('<I', data, 6)
        expected = 4 + 2 + 4 + header_len + 4
        for name, tensor in model.state_dict().items():
            expected += 2 + len(name) + 1 + 4 * tensor.dim() + 1 + tensor.numel() * tensor.element_size()
        self.assertEqual(size, expected)
        self.assertEqual(len(data), expected)
