"""
Scalar losses used for classifier training and distillation
"""
import torch
import torch.nn.functional as F

from src.shared.exceptions import LabelOutOfRange, NotADistribution

from .tensor import expect_rank, expect_same_shape

DISTRIBUTION_TOLERANCE = 1e-5


def _as_labels(labels, batch):
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.dim() != 1 or labels.shape[0] != batch:
        raise LabelOutOfRange(f"Expected {batch} labels, got shape {tuple(labels.shape)}")
    return labels


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], max-stabilized"""
    expect_rank(logits, 2, 'logits')
    labels = _as_labels(labels, logits.shape[0])
    classes = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= classes):
        raise LabelOutOfRange(
            f"Labels must lie in [0, {classes})",
            {'min': int(labels.min()), 'max': int(labels.max())},
        )
    return F.cross_entropy(logits, labels, reduction='mean')


def kl_divergence(p, q_logits):
    """
    Mean over the batch of sum_i p_i log(p_i / softmax(q)_i), with 0 log 0 = 0.
    Only q_logits receives gradient.
    """
    expect_rank(q_logits, 2, 'q_logits')
    expect_same_shape(p, q_logits, 'kl_divergence operands')
    p = p.detach()
    if (p < 0).any() or not torch.allclose(
        p.sum(dim=1), torch.ones(p.shape[0], dtype=p.dtype), rtol=0.0, atol=DISTRIBUTION_TOLERANCE
    ):
        raise NotADistribution('Rows of p must be non-negative and sum to 1')
    return F.kl_div(F.log_softmax(q_logits, dim=1), p, reduction='batchmean')


def mse(a, b):
    """Mean of squared elementwise differences"""
    expect_same_shape(a, b, 'mse operands')
    return F.mse_loss(a, b, reduction='mean')
