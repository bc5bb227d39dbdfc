"""
Surrogate model g = g_c o g_e with g_e = encoder o backbone edge and
g_c = backbone cloud o decoder.
"""
import logging

import torch
from torch import nn

from src.services.model_zoo_service.models import SequentialClassifier, build_model
from src.services.model_zoo_service.specs import ModelSpec
from src.shared.exceptions import InvalidSpec, InvalidSplitPoint
from src.shared.validators import validate_shape

from .adaptation import build_decoder, build_encoder

logger = logging.getLogger(__name__)


class SurrogateModel(nn.Module):
    """
    Without the adaptation module (adapted=False) this is the plain backbone,
    the output-only distillation baseline.
    """
    checkpoint_kind = 'surrogate'

    def __init__(self, backbone, split_index, target_feature_shape, encoder=None, decoder=None, seed=0):
        super().__init__()
        self.backbone = backbone
        self.split_index = split_index
        self.target_feature_shape = tuple(target_feature_shape)
        self.encoder = encoder
        self.decoder = decoder
        self.seed = seed
        self.metadata = {}

    @property
    def adapted(self):
        return self.encoder is not None

    @property
    def spec(self):
        return self.backbone.spec

    @property
    def dtype(self):
        return self.backbone.dtype

    @property
    def backbone_feature_shape(self):
        return tuple(self.spec.feature_shape(self.split_index))

    @property
    def edge_output_shape(self):
        return self.target_feature_shape if self.adapted else self.backbone_feature_shape

    def forward_edge(self, x):
        features = self.backbone.run(x, 0, self.split_index)
        return self.encoder(features) if self.adapted else features

    def forward_cloud(self, features):
        if self.adapted:
            features = self.decoder(features)
        return self.backbone.run(features, self.split_index)

    def forward(self, x):
        return self.forward_cloud(self.forward_edge(x))

    def predict_proba(self, x):
        with torch.no_grad():
            return torch.softmax(self(x.to(self.dtype)), dim=1)

    def checkpoint_header(self):
        return {
            'spec': self.spec.to_dict(),
            'seed': self.seed,
            'split_index': self.split_index,
            'target_feature_shape': list(self.target_feature_shape),
            'adapted': self.adapted,
        }


def _check_split(spec, split_index):
    if split_index not in spec.valid_split_indices:
        raise InvalidSplitPoint(
            f"Surrogate split {split_index} is not permitted for {spec.name}; "
            f"valid positions: {spec.valid_split_indices}",
            {'split_index': split_index, 'valid': spec.valid_split_indices},
        )


def assemble_surrogate(backbone, split_index, target_feature_shape, seed, adapted=True, dtype=None):
    """
    backbone: a ModelSpec (built with the seed) or an existing classifier,
    whose layers are then shared.
    """
    if isinstance(backbone, ModelSpec):
        backbone = build_model(backbone, seed, dtype=dtype)
    elif not isinstance(backbone, SequentialClassifier):
        raise InvalidSpec(f"Backbone must be a ModelSpec or classifier, got {type(backbone).__name__}")
    _check_split(backbone.spec, split_index)
    target_feature_shape = validate_shape(target_feature_shape)

    encoder = decoder = None
    if adapted:
        source = tuple(backbone.spec.feature_shape(split_index))
        encoder = build_encoder(source, target_feature_shape, seed, dtype=backbone.dtype)
        decoder = build_decoder(target_feature_shape, source, seed, dtype=backbone.dtype)
    surrogate = SurrogateModel(backbone, split_index, target_feature_shape, encoder, decoder, seed=seed)
    surrogate.eval()
    logger.info(
        f"Assembled {'adapted' if adapted else 'plain'} surrogate on {backbone.spec.name} "
        f"split {split_index} for features {target_feature_shape}"
    )
    return surrogate


def baseline_surrogate(backbone, split_index, seed, dtype=None):
    """Backbone alone; its edge output is whatever the backbone produces at the split"""
    spec = backbone if isinstance(backbone, ModelSpec) else backbone.spec
    _check_split(spec, split_index)
    return assemble_surrogate(backbone, split_index, spec.feature_shape(split_index), seed, adapted=False, dtype=dtype)


def restore_surrogate(header, tensors, dtype):
    """Checkpoint loader for kind 'surrogate'"""
    surrogate = assemble_surrogate(
        ModelSpec.from_dict(header['spec']),
        int(header['split_index']),
        tuple(header['target_feature_shape']),
        header.get('seed', 0),
        adapted=bool(header.get('adapted', True)),
        dtype=dtype,
    )
    try:
        surrogate.load_state_dict(tensors, strict=True)
    except RuntimeError as e:
        raise InvalidSpec(f"Checkpoint parameters do not match the surrogate: {e}")
    return surrogate
