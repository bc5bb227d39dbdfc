"""
Adaptation module: maps backbone features to the intercepted feature shape
(encoder) and back (decoder).
"""
import logging

from torch import nn

from src.services.autograd_service.tensor import default_dtype
from src.services.model_zoo_service.layers import Conv, ConvTranspose, Resize, he_uniform_
from src.shared.validators import validate_shape

logger = logging.getLogger(__name__)


def _halve(size):
    # kernel 3, stride 2, padding 1
    return (size - 1) // 2 + 1


def scale_plan(src_hw, dst_hw):
    """
    ['up' | 'down', ...] moving (h, w) toward the target by factors of two
    while both sides still differ by at least that factor
    """
    h, w = src_hw
    th, tw = dst_hw
    plan = []
    while True:
        if 2 * h <= th and 2 * w <= tw:
            h, w = 2 * h, 2 * w
            plan.append('up')
        elif h >= 2 * th and w >= 2 * tw:
            h, w = _halve(h), _halve(w)
            plan.append('down')
        else:
            return plan


class AdaptationEncoder(nn.Module):
    """1x1 channel map, a cascade of x2 / /2 stages, exact-size bilinear resize"""

    def __init__(self, src_shape, dst_shape):
        super().__init__()
        self.src_shape = tuple(src_shape)
        self.dst_shape = tuple(dst_shape)
        channels = self.dst_shape[0]
        self.channel_map = Conv(self.src_shape[0], channels, kernel=1, stride=1, padding=0)
        self.plan = scale_plan(self.src_shape[1:], self.dst_shape[1:])
        self.stages = nn.ModuleList(
            ConvTranspose(channels, channels, kernel=2, stride=2) if step == 'up'
            else Conv(channels, channels, kernel=3, stride=2, padding=1)
            for step in self.plan
        )
        self.resize = Resize(*self.dst_shape[1:])

    def forward(self, x):
        x = self.channel_map(x)
        for stage in self.stages:
            x = stage(x)
        return self.resize(x)


class AdaptationDecoder(nn.Module):
    """3x3 conv back to the backbone's channels, then bilinear resize"""

    def __init__(self, feature_shape, backbone_shape):
        super().__init__()
        self.feature_shape = tuple(feature_shape)
        self.backbone_shape = tuple(backbone_shape)
        self.conv = Conv(self.feature_shape[0], self.backbone_shape[0], kernel=3, stride=1, padding=1)
        self.resize = Resize(*self.backbone_shape[1:])

    def forward(self, x):
        return self.resize(self.conv(x))


def build_encoder(src_shape, dst_shape, seed, dtype=None):
    validate_shape(src_shape)
    validate_shape(dst_shape)
    encoder = AdaptationEncoder(src_shape, dst_shape).to(dtype or default_dtype())
    he_uniform_(encoder, seed, 'adaptation-encoder')
    logger.debug(f"Encoder {tuple(src_shape)} -> {tuple(dst_shape)} with stages {encoder.plan}")
    return encoder


def build_decoder(feature_shape, backbone_shape, seed, dtype=None):
    validate_shape(feature_shape)
    validate_shape(backbone_shape)
    decoder = AdaptationDecoder(feature_shape, backbone_shape).to(dtype or default_dtype())
    he_uniform_(decoder, seed, 'adaptation-decoder')
    return decoder
