"""
Dataset loaders: IDX files, CIFAR-10 binary batches and the seeded synthetic set
"""
import logging
import os

import numpy as np
import torch
from sklearn.model_selection import train_test_split

from src.shared.constants import DATASET_SIZES
from src.shared.datasets import ImageDataset
from src.shared.exceptions import DatasetEmpty, IoFailure, MalformedHeader
from src.shared.utils import derive_seed, numpy_generator

logger = logging.getLogger(__name__)

IDX_UBYTE = 0x08
CIFAR10_RECORD = 1 + 3 * 32 * 32
CIFAR10_TRAIN_FILES = [f'data_batch_{i}.bin' for i in range(1, 6)]
CIFAR10_TEST_FILES = ['test_batch.bin']


def _read_bytes(path):
    try:
        with open(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise IoFailure(f"Cannot read {path}: {e}")


def _parse_idx(data, path):
    if len(data) < 4:
        raise MalformedHeader(f"{path}: IDX header is truncated")
    if data[0] != 0 or data[1] != 0:
        raise MalformedHeader(f"{path}: IDX magic must start with two zero bytes")
    if data[2] != IDX_UBYTE:
        raise MalformedHeader(f"{path}: only unsigned-byte IDX payloads are supported (type 0x{data[2]:02x})")
    rank = data[3]
    header_len = 4 + 4 * rank
    if rank == 0 or len(data) < header_len:
        raise MalformedHeader(f"{path}: IDX header declares {rank} dimensions but is truncated")
    dims = tuple(int(v) for v in np.frombuffer(data, dtype='>u4', count=rank, offset=4))
    expected = int(np.prod(dims))
    if len(data) - header_len != expected:
        raise MalformedHeader(
            f"{path}: IDX body holds {len(data) - header_len} bytes, dims {dims} need {expected}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header_len).reshape(dims)


def read_idx(path):
    """Raw uint8 array of an IDX file"""
    return _parse_idx(_read_bytes(path), path)


def load_idx(images_path, labels_path, class_count=10):
    """
    Images file: magic 0x00000803 (N, H, W), single channel, or 0x00000804
    (N, C, H, W). Labels file: magic 0x00000801 (N). Pixels are scaled to [0, 1].
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim == 3:
        images = images[:, None, :, :]
    if images.ndim != 4:
        raise MalformedHeader(f"{images_path}: image IDX must have 3 or 4 dimensions, got {images.ndim}")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise MalformedHeader(f"{labels_path}: expected {images.shape[0]} labels, got shape {labels.shape}")
    logger.info(f"Loaded {images.shape[0]} IDX images of shape {images.shape[1:]} from {images_path}")
    return ImageDataset(
        images=torch.from_numpy(images.astype(np.float32) / 255.0),
        labels=torch.from_numpy(labels.astype(np.int64)),
        name=os.path.basename(images_path),
        class_count=class_count,
    )


def load_cifar10_binary(directory, train=True):
    """Records are 1 label byte followed by 3072 pixel bytes (R, G, B planes of 32x32)"""
    names = CIFAR10_TRAIN_FILES if train else CIFAR10_TEST_FILES
    images, labels = [], []
    for name in names:
        data = _read_bytes(os.path.join(directory, name))
        if len(data) % CIFAR10_RECORD:
            raise MalformedHeader(f"{name}: size {len(data)} is not a multiple of {CIFAR10_RECORD}")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR10_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    images = np.concatenate(images)
    logger.info(f"Loaded {images.shape[0]} CIFAR-10 {'train' if train else 'test'} images from {directory}")
    return ImageDataset(
        images=torch.from_numpy(images.astype(np.float32) / 255.0),
        labels=torch.from_numpy(np.concatenate(labels)),
        name='cifar10-train' if train else 'cifar10-test',
        class_count=10,
    )


def cosine_bases(height, width, frequencies=4):
    """Low-frequency 2-D DCT-II bases, shape [frequencies**2, H, W]"""
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    bases = []
    for u in range(frequencies):
        for v in range(frequencies):
            bases.append(np.outer(np.cos(np.pi * u * ys), np.cos(np.pi * v * xs)))
    return np.stack(bases)


def synth_dataset(count, image_shape=(3, 16, 16), class_count=10, seed=0, stream='train',
                  separation=1.5, spread=0.6, pixel_noise=0.05, frequencies=4):
    """
    Gaussian class clusters in the coefficient space of low-frequency cosine
    bases, squashed into [0, 1]. Class prototypes depend only on the seed,
    so every stream of one seed shares the same classes.
    """
    channels, height, width = image_shape
    bases = cosine_bases(height, width, frequencies)
    prototypes = numpy_generator(seed, 'synth', 'prototypes').normal(
        0.0, separation, size=(class_count, channels, bases.shape[0])
    )
    rng = numpy_generator(seed, 'synth', stream)
    labels = rng.permutation(np.arange(count) % class_count)
    coefficients = prototypes[labels] + rng.normal(0.0, spread, size=(count, channels, bases.shape[0]))
    images = np.einsum('ncb,bhw->nchw', coefficients, bases)
    images += rng.normal(0.0, pixel_noise, size=images.shape)
    images = 1.0 / (1.0 + np.exp(-images))
    return ImageDataset(
        images=torch.from_numpy(images.astype(np.float32)),
        labels=torch.from_numpy(labels.astype(np.int64)),
        name=f'synth-{stream}',
        class_count=class_count,
        ids=[f'{stream}-{i}' for i in range(count)],
    )


def class_balanced_halves(dataset, seed, second_size=None):
    """Disjoint, class-stratified halves: (surrogate-train, attack-eval); second_size defaults to half"""
    if len(dataset) < 2:
        raise DatasetEmpty('Need at least two samples to split a dataset')
    indices = np.arange(len(dataset))
    first, second = train_test_split(
        indices,
        test_size=second_size or 0.5,
        stratify=dataset.labels.numpy(),
        random_state=derive_seed(seed, 'halves') % (2 ** 32),
    )
    first, second = np.sort(first), np.sort(second)
    return (
        dataset.subset(first.tolist(), name=f'{dataset.name}-surrogate'),
        dataset.subset(second.tolist(), name=f'{dataset.name}-attack'),
    )


def desk_scale_splits(seed, input_size=16, class_count=10, sizes=None):
    """Target-train set plus the two class-balanced halves of a held-out pool"""
    sizes = {**DATASET_SIZES, **(sizes or {})}
    shape = (3, input_size, input_size)
    train = synth_dataset(sizes['TRAIN'], shape, class_count, seed, stream='train')
    pool = synth_dataset(
        sizes['SURROGATE_TRAIN'] + sizes['ATTACK_EVAL'], shape, class_count, seed, stream='heldout'
    )
    surrogate, attack = class_balanced_halves(pool, seed, second_size=sizes['ATTACK_EVAL'])
    return {'train': train, 'surrogate': surrogate, 'attack': attack}
