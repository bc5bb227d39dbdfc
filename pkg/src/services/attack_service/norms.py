"""
Perturbation norms and projections. The first dimension is the batch unless
the tensor is 1-D.
"""
import math

import torch

NORM_EPS = 1e-12


def _rows(v):
    return v.reshape(1, -1) if v.dim() <= 1 else v.reshape(v.shape[0], -1)


def _broadcast(values, like):
    return values.reshape(-1, *([1] * (like.dim() - 1))) if like.dim() > 1 else values


def lp_norm(delta, p):
    """Per-sample norm; a tensor [N] (or a 0-d tensor for 1-D input)"""
    rows = _rows(delta)
    norms = rows.abs().amax(dim=1) if math.isinf(p) else rows.norm(p=2, dim=1)
    return norms if delta.dim() > 1 else norms[0]


def normalize(v, p):
    """Steepest-ascent unit direction: sign(v) for l-inf, v / ||v||_2 for l2"""
    if math.isinf(p):
        return torch.sign(v)
    norms = _rows(v).norm(p=2, dim=1).clamp_min(NORM_EPS)
    return v / (_broadcast(norms, v) if v.dim() > 1 else norms[0])


def project(delta, eps, p):
    """
    l-inf: clamp to [-eps, eps]; l2: rescale by eps / ||delta|| when the norm
    exceeds eps; unbounded (eps = inf): identity
    """
    if math.isinf(eps):
        return delta
    if math.isinf(p):
        return delta.clamp(-eps, eps)
    norms = _rows(delta).norm(p=2, dim=1)
    scale = torch.where(norms > eps, eps / norms.clamp_min(NORM_EPS), torch.ones_like(norms))
    return delta * (_broadcast(scale, delta) if delta.dim() > 1 else scale[0])


def clip_to_image(x, delta):
    """The part of delta that keeps x + delta inside [0, 1]"""
    return (x + delta).clamp(0.0, 1.0) - x
