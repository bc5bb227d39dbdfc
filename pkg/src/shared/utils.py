"""
Shared utility functions
"""

import hashlib
import logging
import zlib

import numpy as np
import torch

logger = logging.getLogger(__name__)


def crc32(data):
    """CRC32 of a bytes-like object as an unsigned int"""
    return zlib.crc32(data) & 0xFFFFFFFF


def sha256_file(path):
    """Hex digest of a file, streamed"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def derive_seed(seed, *labels):
    """Stable child seed for a named stream (parameter tensors, samples, cells)"""
    text = ':'.join([str(seed), *[str(label) for label in labels]])
    return int.from_bytes(hashlib.sha256(text.encode('utf-8')).digest()[:8], 'little') & 0x7FFFFFFFFFFFFFFF


def torch_generator(seed, *labels):
    """Seeded CPU generator for the named stream"""
    return torch.Generator().manual_seed(derive_seed(seed, *labels))


def numpy_generator(seed, *labels):
    return np.random.default_rng(derive_seed(seed, *labels))


def parse_endpoint(endpoint):
    """Split 'host:port' into (host, port)"""
    host, _, port = endpoint.rpartition(':')
    return host or '127.0.0.1', int(port)


def format_duration(seconds):
    """Format duration in seconds to human readable format"""
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(seconds), 60)
    hours, minutes = divmod(minutes, 60)
    if hours > 0:
        return f"{hours}h {minutes}m"
    return f"{minutes}m {secs}s"


def safe_mean(values):
    """Mean of a sequence, or None when empty"""
    values = list(values)
    if not values:
        return None
    return float(sum(values) / len(values))
