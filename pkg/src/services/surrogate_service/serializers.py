"""
Surrogate service serializers
"""
from dataclasses import asdict, dataclass

from rest_framework import serializers

from src.shared.constants import DISTILLATION_DEFAULTS, OUTPUT_MODES
from src.shared.validators import run_serializer


class DistillationConfigSerializer(serializers.Serializer):
    """Weights and optimizer settings of the combined distillation loss"""

    alpha = serializers.FloatField(min_value=0.0, default=DISTILLATION_DEFAULTS['ALPHA'])
    beta = serializers.FloatField(min_value=0.0, default=DISTILLATION_DEFAULTS['BETA'])
    output_mode = serializers.ChoiceField(choices=OUTPUT_MODES, default='score')
    lr = serializers.FloatField(default=DISTILLATION_DEFAULTS['LR'])
    epochs = serializers.IntegerField(min_value=0, default=DISTILLATION_DEFAULTS['EPOCHS'])
    batch_size = serializers.IntegerField(min_value=1, default=DISTILLATION_DEFAULTS['BATCH_SIZE'])
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError('Learning rate must be positive')
        return value

    def validate(self, attrs):
        if attrs['alpha'] + attrs['beta'] <= 0:
            raise serializers.ValidationError('At least one of alpha and beta must be positive')
        return attrs


@dataclass(frozen=True)
class DistillationConfig:
    alpha: float
    beta: float
    output_mode: str
    lr: float
    epochs: int
    batch_size: int
    seed: int

    @classmethod
    def create(cls, **data):
        return cls(**run_serializer(DistillationConfigSerializer, data))

    def replace(self, **changes):
        return DistillationConfig.create(**{**asdict(self), **changes})

    def to_dict(self):
        return asdict(self)
