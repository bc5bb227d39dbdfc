"""
Edge/cloud partitioning of a sequential classifier
"""
from dataclasses import dataclass

import torch

from src.shared.exceptions import InvalidSplitPoint, ShapeMismatch

from .models import LayerRange


@dataclass
class SplitModel:
    """
    edge runs layers [0, split_index), cloud runs the rest. Both hold the
    very same layer objects as the full model.
    """
    model: object
    edge: LayerRange
    cloud: LayerRange
    split_index: int
    feature_shape: tuple

    @property
    def feature_size(self):
        c, h, w = self.feature_shape
        return c * h * w

    @property
    def input_shape(self):
        return self.model.spec.input_shape

    @property
    def class_count(self):
        return self.model.spec.class_count

    @property
    def dtype(self):
        return self.model.dtype


def split_at(model, split_index):
    spec = model.spec
    valid = spec.valid_split_indices
    if split_index not in valid:
        raise InvalidSplitPoint(
            f"Split {split_index} is not permitted for {spec.name}; valid positions: {valid}",
            {'split_index': split_index, 'valid': valid},
        )
    layers = list(model.layers)
    return SplitModel(
        model=model,
        edge=LayerRange(layers[:split_index]),
        cloud=LayerRange(layers[split_index:]),
        split_index=split_index,
        feature_shape=tuple(spec.feature_shape(split_index)),
    )


def flatten_features(feat):
    """[1, C, H, W] -> length C*H*W vector in channel, row, column order"""
    if feat.dim() != 4 or feat.shape[0] != 1:
        raise ShapeMismatch(f"Features are transmitted one sample at a time, got {tuple(feat.shape)}")
    return feat.reshape(-1)


def reshape_features(vector, shape):
    """Inverse of flatten_features for a known (C, H, W)"""
    c, h, w = shape
    vector = torch.as_tensor(vector)
    if vector.numel() != c * h * w:
        raise ShapeMismatch(f"{vector.numel()} values cannot form ({c}, {h}, {w})")
    return vector.reshape(1, c, h, w)
