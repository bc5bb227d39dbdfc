"""
Surrogate-side computations: PGD, surrogate gradients, output-diversified
directions and offline transfer evaluation
"""
import logging

import torch

from src.services.autograd_service.losses import softmax_cross_entropy
from src.services.model_zoo_service.training import predict_labels
from src.shared.constants import ODS_MAX_RESAMPLES
from src.shared.exceptions import DatasetEmpty, DegenerateDirection, NonFiniteGradient
from src.shared.utils import torch_generator

from .norms import NORM_EPS, clip_to_image, lp_norm, normalize, project

logger = logging.getLogger(__name__)


def _dtype(model):
    return next(model.parameters()).dtype


def input_gradient(surrogate, x, objective):
    """d objective(surrogate logits) / dx, in the input's dtype"""
    point = x.detach().to(_dtype(surrogate)).requires_grad_(True)
    with torch.enable_grad():
        (grad,) = torch.autograd.grad(objective(surrogate(point)), point)
    if not torch.isfinite(grad).all():
        raise NonFiniteGradient('Surrogate gradient contains NaN or Inf')
    return grad.to(x.dtype)


def surrogate_gradient(surrogate, x, labels):
    """Gradient of the cross-entropy against labels; its ascent direction moves away from them"""
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    return input_gradient(surrogate, x, lambda logits: softmax_cross_entropy(logits, labels))


def pgd(surrogate, x, y, cfg):
    """
    k steps of delta <- project(delta + step * normalize(grad), eps, p), with
    the image clamped to [0, 1] after each step. Starts from delta = 0.
    """
    x = x.detach()
    delta = torch.zeros_like(x)
    step = cfg.step
    for _ in range(cfg.iterations):
        grad = surrogate_gradient(surrogate, x + delta, y)
        delta = project(delta + step * normalize(grad, cfg.norm), cfg.eps, cfg.norm)
        delta = clip_to_image(x, delta)
    return x + delta


def ods_direction(surrogate, x, seed=0, generator=None):
    """
    Unit-l2 input direction grad_x (w . logits(x)) with w ~ U[-1, 1]^K.
    x is a single sample [1, C, H, W].
    """
    generator = generator or torch_generator(seed, 'ods')
    classes = surrogate.spec.class_count
    for _ in range(ODS_MAX_RESAMPLES):
        weights = torch.rand(classes, generator=generator, dtype=torch.float64) * 2.0 - 1.0
        grad = input_gradient(surrogate, x, lambda logits: (logits * weights.to(logits.dtype)).sum())
        if float(lp_norm(grad, 2).max()) > NORM_EPS:
            return normalize(grad, 2)
    raise DegenerateDirection(f"Surrogate gradient vanished for {ODS_MAX_RESAMPLES} sampled directions")


def evaluate_transfer(target, adv_batch, labels):
    """Fraction of adversarial inputs the target misclassifies; charges no queries"""
    if adv_batch.shape[0] == 0:
        raise DatasetEmpty('Transfer evaluation needs at least one example')
    predictions = predict_labels(target, adv_batch)
    labels = torch.as_tensor(labels, dtype=torch.long)
    return float((predictions != labels).sum()) / adv_batch.shape[0]
