"""
Parameterised layer modules built on the validated autograd ops
"""
import math

import torch
from torch import nn

from src.services.autograd_service import ops
from src.shared.utils import torch_generator


class Conv(nn.Module):
    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding=1):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels))

    @property
    def fan_in(self):
        return self.weight[0].numel()

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose(nn.Module):
    def __init__(self, in_channels, out_channels, kernel=2, stride=2):
        super().__init__()
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(in_channels, out_channels, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels))

    @property
    def fan_in(self):
        return self.weight.shape[0] * self.weight.shape[2] * self.weight.shape[3]

    def forward(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, stride=self.stride)


class Affine(nn.Module):
    def __init__(self, in_features, out_features):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))

    @property
    def fan_in(self):
        return self.weight.shape[1]

    def forward(self, x):
        return ops.affine(x, self.weight, self.bias)


class ReLU(nn.Module):
    def forward(self, x):
        return ops.relu(x)


class MaxPool(nn.Module):
    def __init__(self, kernel=2, stride=2):
        super().__init__()
        self.kernel = kernel
        self.stride = stride

    def forward(self, x):
        return ops.maxpool2d(x, kernel=self.kernel, stride=self.stride)


class Flatten(nn.Module):
    def forward(self, x):
        return ops.flatten(x)


class ResBlock(nn.Module):
    """relu(x + conv(relu(conv(x)))) with channel- and size-preserving 3x3 convs"""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = Conv(channels, channels, kernel=3, stride=1, padding=1)
        self.conv2 = Conv(channels, channels, kernel=3, stride=1, padding=1)

    def forward(self, x):
        return ops.relu(x + self.conv2(ops.relu(self.conv1(x))))


class Resize(nn.Module):
    """Bilinear resize to a fixed spatial size"""

    def __init__(self, out_h, out_w):
        super().__init__()
        self.out_h = out_h
        self.out_w = out_w

    def forward(self, x):
        return ops.interpolate_bilinear(x, self.out_h, self.out_w)


def build_layer(layer_spec):
    params = layer_spec.params
    if layer_spec.kind == 'conv':
        return Conv(
            params['in_channels'], params['out_channels'],
            kernel=params.get('kernel', 3), stride=params.get('stride', 1), padding=params.get('padding', 0),
        )
    if layer_spec.kind == 'affine':
        return Affine(params['in_features'], params['out_features'])
    if layer_spec.kind == 'maxpool':
        return MaxPool(kernel=params.get('kernel', 2), stride=params.get('stride', 2))
    if layer_spec.kind == 'resblock':
        return ResBlock(params['channels'])
    if layer_spec.kind == 'relu':
        return ReLU()
    return Flatten()


def he_uniform_(module, seed, scope=''):
    """
    He-uniform weights (bound sqrt(6 / fan_in)) and zero biases. Every
    parameter tensor draws from its own generator keyed by seed and name,
    so adding a layer never shifts the values of the others.
    """
    with torch.no_grad():
        for name, param in module.named_parameters():
            owner = module.get_submodule(name.rsplit('.', 1)[0]) if '.' in name else module
            if name.endswith('bias'):
                param.zero_()
                continue
            bound = math.sqrt(6.0 / owner.fan_in)
            generator = torch_generator(seed, scope, name)
            values = torch.rand(param.shape, generator=generator, dtype=torch.float64)
            param.copy_((values * 2.0 - 1.0) * bound)
    return module
