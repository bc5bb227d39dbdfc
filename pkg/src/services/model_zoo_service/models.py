"""
Sequential classifiers built from a ModelSpec
"""
import logging

import torch
from torch import nn

from src.services.autograd_service.tensor import default_dtype
from src.shared.exceptions import InvalidSpec, SplitLeakError

from .layers import build_layer, he_uniform_

logger = logging.getLogger(__name__)


class LayerRange(nn.Module):
    """Runs a contiguous slice of layers; the layer objects are shared, not copied"""

    def __init__(self, layers):
        super().__init__()
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class SequentialClassifier(LayerRange):
    checkpoint_kind = 'classifier'

    def __init__(self, spec, layers, seed=0):
        super().__init__(layers)
        self.spec = spec
        self.seed = seed
        self.metadata = {}

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def run(self, x, start=0, stop=None):
        for layer in self.layers[start:stop]:
            x = layer(x)
        return x

    def predict_proba(self, x):
        with torch.no_grad():
            return torch.softmax(self(x.to(self.dtype)), dim=1)

    def checkpoint_header(self):
        return {'spec': self.spec.to_dict(), 'seed': self.seed}


def build_model(spec, seed, dtype=None):
    """Instantiate a spec with seeded He-uniform parameters"""
    try:
        spec.layer_shapes()
    except InvalidSpec as e:
        logger.warning(f"Rejected spec '{spec.name}' at layer {e.layer_index}: {e.message}")
        raise
    model = SequentialClassifier(spec, [build_layer(layer) for layer in spec.layers], seed=seed)
    model.to(dtype or default_dtype())
    he_uniform_(model, seed, spec.name)
    model.eval()
    return model


def restore_classifier(header, tensors, dtype):
    """Checkpoint loader for kind 'classifier'"""
    from .specs import ModelSpec

    model = build_model(ModelSpec.from_dict(header['spec']), header.get('seed', 0), dtype=dtype)
    try:
        model.load_state_dict(tensors, strict=True)
    except RuntimeError as e:
        raise InvalidSpec(f"Checkpoint parameters do not match the spec: {e}")
    return model


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())


def describe(model):
    """One line per layer with its output shape, for command output"""
    if not isinstance(model, SequentialClassifier):
        raise SplitLeakError('Only classifiers carry a layer spec')
    lines = []
    for index, (layer, shape) in enumerate(zip(model.spec.layers, model.spec.layer_shapes())):
        lines.append(f"{index:>3}  {layer.kind:<9} -> {shape}")
    return lines
