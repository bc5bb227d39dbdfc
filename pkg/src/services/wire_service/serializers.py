"""
Wire service serializers
"""
from dataclasses import dataclass

from rest_framework import serializers

from src.shared.constants import SERVING_MODES
from src.shared.validators import run_serializer


def shape_field(**kwargs):
    """(C, H, W) of positive ints"""
    return serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=3, max_length=3, **kwargs
    )


class SessionConfigSerializer(serializers.Serializer):
    """Cloud-side session settings"""

    output_mode = serializers.ChoiceField(choices=SERVING_MODES)
    input_shape = shape_field()
    feature_shape = shape_field()


@dataclass(frozen=True)
class SessionConfig:
    output_mode: str
    input_shape: tuple
    feature_shape: tuple

    @property
    def feature_payload_bytes(self):
        c, h, w = self.feature_shape
        return 4 * c * h * w

    @classmethod
    def create(cls, **data):
        values = run_serializer(SessionConfigSerializer, data)
        return cls(
            output_mode=values['output_mode'],
            input_shape=tuple(values['input_shape']),
            feature_shape=tuple(values['feature_shape']),
        )

    @classmethod
    def for_split(cls, split_model, output_mode):
        return cls.create(
            output_mode=output_mode,
            input_shape=list(split_model.input_shape),
            feature_shape=list(split_model.feature_shape),
        )
