"""
Differentiable layer primitives.

Thin validated wrappers over ``torch.nn.functional``: each checks the shape
contract, raises ``ShapeMismatch`` on violation and otherwise defers to torch,
whose autograd graph records the ops for the backward pass.
"""
import torch
import torch.nn.functional as F

from src.shared.exceptions import ShapeMismatch

from .tensor import expect_rank


def _conv_out(size, kernel, stride, padding):
    span = size + 2 * padding - kernel
    if span < 0:
        return 0
    return span // stride + 1


def conv2d(input, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of an NCHW batch with a [Cout, Cin, kh, kw] kernel"""
    expect_rank(input, 4, 'input')
    expect_rank(weight, 4, 'weight')
    if stride < 1 or padding < 0:
        raise ShapeMismatch(f"Invalid stride {stride} / padding {padding}")
    n, cin, h, w = input.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeMismatch(
            f"conv2d channel mismatch: input has {cin}, weight expects {wcin}",
            {'input_channels': cin, 'weight_channels': wcin},
        )
    if bias is not None and tuple(bias.shape) != (cout,):
        raise ShapeMismatch(f"conv2d bias must have shape ({cout},), got {tuple(bias.shape)}")
    if _conv_out(h, kh, stride, padding) < 1 or _conv_out(w, kw, stride, padding) < 1:
        raise ShapeMismatch(
            f"conv2d output would be empty for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    return F.conv2d(input, weight, bias, stride=stride, padding=padding)


def conv_transpose2d(input, weight, bias=None, stride=1):
    """Adjoint of conv2d: [N, Cin, H, W] -> [N, Cout, (H-1)*stride + kh, ...]"""
    expect_rank(input, 4, 'input')
    expect_rank(weight, 4, 'weight')
    if stride < 1:
        raise ShapeMismatch(f"Invalid stride {stride}")
    cin = input.shape[1]
    wcin, cout = weight.shape[0], weight.shape[1]
    if cin != wcin:
        raise ShapeMismatch(
            f"conv_transpose2d channel mismatch: input has {cin}, weight expects {wcin}",
            {'input_channels': cin, 'weight_channels': wcin},
        )
    if bias is not None and tuple(bias.shape) != (cout,):
        raise ShapeMismatch(f"conv_transpose2d bias must have shape ({cout},)")
    return F.conv_transpose2d(input, weight, bias, stride=stride)


def interpolate_bilinear(input, out_h, out_w):
    """
    Bilinear resampling with half-pixel centres: the source coordinate of
    output index i is (i + 0.5) * H / out_h - 0.5, clamped at the border.
    Equal sizes return the input untouched.
    """
    expect_rank(input, 4, 'input')
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"Interpolation target must be positive, got {out_h}x{out_w}")
    if input.shape[2] == out_h and input.shape[3] == out_w:
        return input
    return F.interpolate(input, size=(out_h, out_w), mode='bilinear', align_corners=False)


def relu(x):
    return torch.relu(x)


def affine(x, weight, bias=None):
    """x @ W^T + b for x: [N, Din], W: [Dout, Din]"""
    expect_rank(x, 2, 'input')
    expect_rank(weight, 2, 'weight')
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(
            f"affine expects {weight.shape[1]} input features, got {x.shape[1]}",
            {'expected': weight.shape[1], 'got': x.shape[1]},
        )
    if bias is not None and tuple(bias.shape) != (weight.shape[0],):
        raise ShapeMismatch(f"affine bias must have shape ({weight.shape[0]},)")
    return F.linear(x, weight, bias)


def maxpool2d(x, kernel=2, stride=2):
    """Max pooling; gradient goes to the first maximum in row-major order"""
    expect_rank(x, 4, 'input')
    if x.shape[2] < kernel or x.shape[3] < kernel:
        raise ShapeMismatch(f"maxpool2d needs at least {kernel}x{kernel}, got {tuple(x.shape[2:])}")
    return F.max_pool2d(x, kernel_size=kernel, stride=stride)


def flatten(x):
    """[N, ...] -> [N, prod(...)] in row-major (channel, height, width) order"""
    if x.dim() < 2:
        raise ShapeMismatch(f"flatten needs a batch dimension, got shape {tuple(x.shape)}")
    return torch.flatten(x, start_dim=1)
