import math

import torch
from django.test import SimpleTestCase

from src.shared.exceptions import (
    LabelOutOfRange, NonFinite, NotADistribution, ShapeMismatch,
)
from .gradcheck import grad_check
from .losses import kl_divergence, mse, softmax_cross_entropy
from .ops import (
    affine, conv2d, conv_transpose2d, flatten, interpolate_bilinear, maxpool2d, relu,
)
from .optim import AdamState, adam_update

F64 = torch.float64
SEEDS = [0, 1, 2, 3, 4]


def _rand(shape, seed, dtype=F64):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)


def _naive_conv(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = torch.zeros(n, cout, ho, wo, dtype=F64)
    for i in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    acc = float(b[o]) if b is not None else 0.0
                    for c in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                sy = y * stride + ky - pad
                                sx = xx * stride + kx - pad
                                if 0 <= sy < h and 0 <= sx < wd:
                                    acc += float(x[i, c, sy, sx]) * float(w[o, c, ky, kx])
                    out[i, o, y, xx] = acc
    return out


class ConvolutionTests(SimpleTestCase):
    def test_scalar_product(self):
        out = conv2d(torch.tensor([[[[2.0]]]]), torch.tensor([[[[3.0]]]]))
        self.assertEqual(out.tolist(), [[[[6.0]]]])

    def test_full_sum(self):
        x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        self.assertEqual(conv2d(x, torch.ones(1, 1, 2, 2)).tolist(), [[[[10.0]]]])

    def test_matches_loop_oracle(self):
        x = _rand((2, 3, 5, 5), 7)
        w = _rand((4, 3, 3, 3), 8)
        b = _rand((4,), 9)
        out = conv2d(x, w, b, stride=1, padding=1)
        self.assertTrue(torch.allclose(out, _naive_conv(x, w, b, 1, 1), atol=1e-12, rtol=0))

    def test_channel_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            conv2d(torch.zeros(1, 2, 4, 4), torch.zeros(3, 3, 3, 3))

    def test_empty_output_rejected(self):
        with self.assertRaises(ShapeMismatch):
            conv2d(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3))

    def test_transpose_scalar(self):
        out = conv_transpose2d(torch.tensor([[[[2.0]]]]), torch.tensor([[[[3.0]]]]))
        self.assertEqual(out.tolist(), [[[[6.0]]]])

    def test_transpose_kernel_stamp(self):
        w = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = conv_transpose2d(torch.tensor([[[[1.0]]]]), w, stride=2)
        self.assertEqual(out.tolist(), w.tolist())

    def test_adjoint_identity(self):
        for seed in SEEDS:
            y = _rand((2, 3, 7, 7), seed)
            w = _rand((4, 3, 3, 3), seed + 100)
            forward = conv2d(y, w, stride=2)
            x = _rand(tuple(forward.shape), seed + 200)
            lhs = (forward * x).sum()
            back = conv_transpose2d(x, w, stride=2)
            self.assertEqual(back.shape, y.shape)
            rhs = (y * back).sum()
            self.assertLess(abs(float(lhs - rhs)), 1e-10 * max(1.0, abs(float(lhs))))


class InterpolationTests(SimpleTestCase):
    def test_equal_size_is_identity(self):
        x = _rand((2, 3, 4, 5), 3, torch.float32)
        self.assertTrue(torch.equal(interpolate_bilinear(x, 4, 5), x))

    def test_constant_extension(self):
        out = interpolate_bilinear(torch.full((1, 1, 1, 1), 5.0), 2, 2)
        self.assertEqual(out.tolist(), [[[[5.0, 5.0], [5.0, 5.0]]]])

    def test_half_pixel_formula(self):
        x = torch.tensor([[[[0.0, 1.0], [2.0, 3.0]]]], dtype=F64)
        out = interpolate_bilinear(x, 3, 3)

        def coord(i, n_in, n_out):
            src = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
            lo = int(math.floor(src))
            hi = min(lo + 1, n_in - 1)
            return lo, hi, src - lo

        for r in range(3):
            for c in range(3):
                r0, r1, wr = coord(r, 2, 3)
                c0, c1, wc = coord(c, 2, 3)
                top = (1 - wc) * float(x[0, 0, r0, c0]) + wc * float(x[0, 0, r0, c1])
                bottom = (1 - wc) * float(x[0, 0, r1, c0]) + wc * float(x[0, 0, r1, c1])
                expected = (1 - wr) * top + wr * bottom
                self.assertAlmostEqual(float(out[0, 0, r, c]), expected, places=12)

    def test_constant_maps_to_constant(self):
        out = interpolate_bilinear(torch.full((1, 2, 3, 5), 1.5, dtype=F64), 7, 2)
        self.assertTrue(torch.allclose(out, torch.full_like(out, 1.5)))


class PointwiseTests(SimpleTestCase):
    def test_relu(self):
        self.assertEqual(relu(torch.tensor([-1.0, 0.0, 2.0])).tolist(), [0.0, 0.0, 2.0])

    def test_affine_identity(self):
        x = _rand((3, 4), 1)
        self.assertTrue(torch.equal(affine(x, torch.eye(4, dtype=F64), torch.zeros(4, dtype=F64)), x))

    def test_affine_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            affine(torch.zeros(2, 3), torch.zeros(4, 5))

    def test_maxpool_routes_gradient_to_argmax(self):
        x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]], requires_grad=True)
        out = maxpool2d(x)
        self.assertEqual(out.tolist(), [[[[4.0]]]])
        out.sum().backward()
        self.assertEqual(x.grad.tolist(), [[[[0.0, 0.0], [0.0, 1.0]]]])

    def test_maxpool_tie_goes_to_first_index(self):
        x = torch.ones(1, 1, 2, 2, requires_grad=True)
        maxpool2d(x).sum().backward()
        self.assertEqual(x.grad.tolist(), [[[[1.0, 0.0], [0.0, 0.0]]]])

    def test_flatten_row_major(self):
        x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        self.assertEqual(flatten(x).tolist(), [[1.0, 2.0, 3.0, 4.0]])


class LossTests(SimpleTestCase):
    def test_uniform_cross_entropy(self):
        loss = softmax_cross_entropy(torch.zeros(1, 10, dtype=F64), [3])
        self.assertAlmostEqual(float(loss), math.log(10), places=6)

    def test_cross_entropy_stabilized(self):
        logits = torch.zeros(1, 5)
        logits[0, 2] = 1000.0
        loss = softmax_cross_entropy(logits, [2])
        self.assertTrue(math.isfinite(float(loss)))
        self.assertAlmostEqual(float(loss), 0.0, places=6)

    def test_cross_entropy_matches_formula(self):
        logits = _rand((6, 4), 11)
        labels = [0, 1, 2, 3, 1, 0]
        expected = 0.0
        for row, label in zip(logits.tolist(), labels):
            expected += -row[label] + math.log(sum(math.exp(v) for v in row))
        self.assertAlmostEqual(float(softmax_cross_entropy(logits, labels)), expected / 6, delta=1e-6)

    def test_label_out_of_range(self):
        with self.assertRaises(LabelOutOfRange):
            softmax_cross_entropy(torch.zeros(2, 3), [0, 3])

    def test_kl_zero_for_identical(self):
        q = _rand((3, 5), 2)
        self.assertLess(abs(float(kl_divergence(torch.softmax(q, 1), q))), 1e-7)

    def test_kl_one_hot_against_uniform(self):
        loss = kl_divergence(torch.tensor([[1.0, 0.0]], dtype=F64), torch.zeros(1, 2, dtype=F64))
        self.assertAlmostEqual(float(loss), math.log(2), places=6)

    def test_kl_matches_naive_sum(self):
        p = torch.softmax(_rand((4, 6), 5), 1)
        q = _rand((4, 6), 6)
        qs = torch.softmax(q, 1)
        expected = float((p * (p / qs).log()).sum() / 4)
        self.assertAlmostEqual(float(kl_divergence(p, q)), expected, delta=1e-6)

    def test_kl_rejects_non_distribution(self):
        with self.assertRaises(NotADistribution):
            kl_divergence(torch.tensor([[0.7, 0.7]]), torch.zeros(1, 2))

    def test_mse(self):
        self.assertEqual(float(mse(torch.zeros(2), torch.zeros(2))), 0.0)
        self.assertEqual(float(mse(torch.tensor([0.0, 0.0]), torch.tensor([3.0, 4.0]))), 12.5)
        a, b = _rand((3, 7), 1), _rand((3, 7), 2)
        naive = sum((x - y) ** 2 for x, y in zip(a.flatten().tolist(), b.flatten().tolist())) / 21
        self.assertAlmostEqual(float(mse(a, b)), naive, delta=1e-7)
        with self.assertRaises(ShapeMismatch):
            mse(torch.zeros(2), torch.zeros(3))


class AdamTests(SimpleTestCase):
    def test_first_step_is_sign_step(self):
        p = torch.tensor([1.0, -2.0], dtype=F64)
        state = AdamState([p], lr=0.05)
        adam_update([p], [torch.tensor([3.0, -0.5], dtype=F64)], state)
        self.assertEqual(state.t, 1)
        self.assertTrue(torch.allclose(p, torch.tensor([0.95, -1.95], dtype=F64), atol=1e-7))

    def test_zero_gradient_leaves_params(self):
        p = torch.tensor([1.0, 2.0], dtype=F64)
        state = AdamState([p], lr=0.1)
        adam_update([p], [torch.zeros(2, dtype=F64)], state)
        self.assertEqual(p.tolist(), [1.0, 2.0])

    def test_quadratic_recurrence(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = torch.tensor([2.0], dtype=F64)
        state = AdamState([p], lr=lr)
        x, m, v = 2.0, 0.0, 0.0
        for t in range(1, 4):
            g = 2 * x
            adam_update([p], [torch.tensor([2 * float(p)], dtype=F64)], state)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        self.assertAlmostEqual(float(p), x, delta=1e-10)
        self.assertEqual(state.t, 3)

    def test_shape_mismatch(self):
        p = torch.zeros(2)
        with self.assertRaises(ShapeMismatch):
            adam_update([p], [torch.zeros(3)], AdamState([p], lr=0.1))


class GradCheckTests(SimpleTestCase):
    def test_quadratic(self):
        x = _rand((4, 3), 1)
        self.assertLess(grad_check(lambda t: mse(t, torch.zeros_like(t)), x), 1e-8)

    def test_constant(self):
        self.assertLess(grad_check(lambda t: torch.tensor(3.0, dtype=F64), _rand((3,), 1)), 1e-10)

    def test_non_finite(self):
        with self.assertRaises(NonFinite):
            grad_check(lambda t: (t / 0.0).sum(), torch.ones(2, dtype=F64))

    def test_every_differentiable_op(self):
        for seed in SEEDS:
            w = _rand((3, 2, 3, 3), seed + 10)
            wt = _rand((2, 3, 2, 2), seed + 20)
            lin = _rand((4, 18), seed + 30)
            labels = [seed % 4, (seed + 1) % 4]
            probs = torch.softmax(_rand((2, 5), seed + 40), 1)
            target = _rand((2, 2, 3, 3), seed + 50)
            head = _rand((4, 48), seed + 60)
            cases = {
                'conv2d_input': (lambda t: (conv2d(t, w, padding=1) ** 2).sum(), _rand((2, 2, 4, 4), seed)),
                'conv2d_weight': (lambda t: (conv2d(_rand((2, 2, 4, 4), seed), t, padding=1) ** 2).sum(), w),
                'conv_transpose2d': (lambda t: (conv_transpose2d(t, wt, stride=2) ** 2).sum(), _rand((1, 2, 3, 3), seed)),
                'interpolate': (lambda t: (interpolate_bilinear(t, 5, 7) ** 2).sum(), _rand((1, 2, 3, 4), seed)),
                'affine': (lambda t: (affine(t, lin) ** 2).sum(), _rand((2, 18), seed)),
                'relu_composite': (
                    lambda t: softmax_cross_entropy(affine(flatten(relu(conv2d(t, w, padding=1))), head), labels),
                    _rand((2, 2, 4, 4), seed),
                ),
                'cross_entropy': (lambda t: softmax_cross_entropy(t, labels), _rand((2, 4), seed)),
                'kl_divergence': (lambda t: kl_divergence(probs, t), _rand((2, 5), seed)),
                'mse': (lambda t: mse(t, target), _rand((2, 2, 3, 3), seed)),
            }
            for name, (fn, point) in cases.items():
                with self.subTest(op=name, seed=seed):
                    self.assertLess(grad_check(fn, point), 1e-6)
