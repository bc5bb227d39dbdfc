"""
Calibration captures with a known feature layout: random-weight CNN edges
applied to smooth, object-centred synthetic images.
"""
import logging

import numpy as np
import torch
from scipy.ndimage import gaussian_filter
from torch import nn

from src.services.autograd_service.tensor import default_dtype
from src.services.model_zoo_service.layers import build_layer, he_uniform_
from src.services.model_zoo_service.specs import conv, relu
from src.shared.utils import numpy_generator

logger = logging.getLogger(__name__)

PROBE_HIDDEN_CHANNELS = 16


def centred_window(size):
    """Separable sin^2 window, largest at the image centre"""
    ramp = np.sin(np.pi * (np.arange(size) + 0.5) / size) ** 2
    return np.outer(ramp, ramp)


def natural_images(count, size, seed, channels=3, contrast=0.15):
    """Spatially correlated random fields under a centred window, in [0, 1]"""
    rng = numpy_generator(seed, 'probe', 'images', size)
    noise = rng.normal(size=(count, channels, size, size))
    field = gaussian_filter(noise, sigma=(0, 0, size / 8, size / 8), mode='reflect')
    field /= field.std()
    images = np.clip(0.5 + contrast * centred_window(size) * field, 0.0, 1.0)
    return torch.from_numpy(images.astype(np.float32))


def random_cnn_edge(channels, seed, in_channels=3):
    """conv -> relu -> conv at full resolution; the output is the pre-activation of the last conv"""
    edge = nn.Sequential(
        build_layer(conv(in_channels, PROBE_HIDDEN_CHANNELS)),
        build_layer(relu()),
        build_layer(conv(PROBE_HIDDEN_CHANNELS, channels)),
    ).to(default_dtype())
    he_uniform_(edge, seed, scope=f'probe-{channels}')
    return edge.eval()


def capture_features(edge, images, batch_size=128):
    """Flattened edge outputs as a float32 capture matrix [N, C*H*W]"""
    rows = []
    with torch.no_grad():
        for batch in images.split(batch_size):
            rows.append(edge(batch.to(default_dtype())).reshape(len(batch), -1).float())
    if not rows:
        return np.zeros((0, 0), dtype=np.float32)
    return torch.cat(rows).numpy()


def probe_capture(channels, width, count, seed):
    """Capture of `count` samples whose true layout is (channels, width, width)"""
    edge = random_cnn_edge(channels, seed)
    capture = capture_features(edge, natural_images(count, width, seed))
    logger.debug(f"Probe capture for ({channels}, {width}, {width}): {capture.shape}")
    return capture
