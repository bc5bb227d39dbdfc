"""
Tensor construction and element precision.

Tensors are plain ``torch.Tensor`` objects on the CPU. The element precision
(binary32 or binary64) is a per-run setting; gradient checks and statistical
oracles always use binary64.
"""
import torch
from django.conf import settings

from src.shared.exceptions import InvalidConfig, NonFinite, ShapeMismatch

PRECISIONS = {
    'float32': torch.float32,
    'float64': torch.float64,
}

ELEMENT_SIZE = {
    torch.float32: 4,
    torch.float64: 8,
}


def default_dtype():
    """Element precision configured for training and attacks"""
    try:
        return PRECISIONS[settings.SPLITLEAK_DTYPE]
    except KeyError:
        raise InvalidConfig(f"SPLITLEAK_DTYPE must be one of {sorted(PRECISIONS)}")


def dtype_for_size(size):
    """torch dtype for an element size in bytes (4 or 8)"""
    for dtype, width in ELEMENT_SIZE.items():
        if width == size:
            return dtype
    raise InvalidConfig(f"Unsupported element size {size}")


def as_tensor(values, dtype=None, requires_grad=False):
    """Copy array-like values into a fresh tensor of the run precision"""
    tensor = torch.as_tensor(values, dtype=dtype or default_dtype()).clone()
    if requires_grad:
        tensor.requires_grad_(True)
    return tensor


def expect_rank(tensor, rank, name):
    if tensor.dim() != rank:
        raise ShapeMismatch(
            f"{name} must be rank {rank}, got shape {tuple(tensor.shape)}",
            {'name': name, 'shape': list(tensor.shape)},
        )


def expect_same_shape(a, b, name='operands'):
    if a.shape != b.shape:
        raise ShapeMismatch(
            f"{name} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}",
            {'left': list(a.shape), 'right': list(b.shape)},
        )


def ensure_finite(tensor, what='tensor'):
    if not torch.isfinite(tensor).all():
        raise NonFinite(f"{what} contains NaN or Inf")
    return tensor
