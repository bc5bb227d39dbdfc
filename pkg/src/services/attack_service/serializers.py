"""
Attack service serializers
"""
import math
from dataclasses import asdict, dataclass

from rest_framework import serializers

from src.shared.constants import (
    ATTACK_METHODS, FEEDBACK_MODES, PGD_ITERATIONS, QUERY_BUDGET, RGF_DEFAULTS, UNBOUNDED_L2_STEP,
)
from src.shared.exceptions import InvalidConfig
from src.shared.validators import parse_epsilon, parse_norm, run_serializer


class AttackConfigSerializer(serializers.Serializer):
    """
    Validate an attack run. norm and eps accept the command-line spellings
    ('2', 'inf', '8/255', 'inf').
    """
    method = serializers.ChoiceField(choices=ATTACK_METHODS, default='gfcs')
    norm = serializers.CharField(default='2')
    eps = serializers.CharField(default='1.0')
    iterations = serializers.IntegerField(min_value=1, default=PGD_ITERATIONS)
    step_size = serializers.FloatField(required=False, allow_null=True, default=None)
    query_budget = serializers.IntegerField(min_value=1, default=QUERY_BUDGET)
    feedback = serializers.ChoiceField(choices=FEEDBACK_MODES, default='score')
    seed = serializers.IntegerField(min_value=0, default=0)
    rgf_samples = serializers.IntegerField(min_value=1, default=RGF_DEFAULTS['SAMPLES'])
    rgf_sigma = serializers.FloatField(default=RGF_DEFAULTS['SIGMA'])
    prior_weight = serializers.FloatField(min_value=0.0, max_value=1.0, default=RGF_DEFAULTS['PRIOR_WEIGHT'])

    def validate_norm(self, value):
        try:
            return parse_norm(value)
        except InvalidConfig as e:
            raise serializers.ValidationError(e.message)

    def validate_eps(self, value):
        try:
            return parse_epsilon(value)
        except InvalidConfig as e:
            raise serializers.ValidationError(e.message)

    def validate_step_size(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError('Step size must be positive')
        return value

    def validate_rgf_sigma(self, value):
        if value <= 0:
            raise serializers.ValidationError('Smoothing sigma must be positive')
        return value


@dataclass(frozen=True)
class AttackConfig:
    method: str
    norm: float
    eps: float
    iterations: int
    step_size: float
    query_budget: int
    feedback: str
    seed: int
    rgf_samples: int
    rgf_sigma: float
    prior_weight: float

    @classmethod
    def create(cls, **data):
        if 'norm' in data and not isinstance(data['norm'], str):
            data['norm'] = 'inf' if math.isinf(data['norm']) else str(int(data['norm']))
        if 'eps' in data and not isinstance(data['eps'], str):
            data['eps'] = 'inf' if math.isinf(data['eps']) else repr(float(data['eps']))
        return cls(**run_serializer(AttackConfigSerializer, data))

    def replace(self, **changes):
        return AttackConfig.create(**{**asdict(self), **changes})

    @property
    def bounded(self):
        return not math.isinf(self.eps)

    @property
    def step(self):
        """
        Explicit step_size, else 2 * eps / sqrt(k) (l2) or 2.5 * eps / k (l-inf);
        a fixed l2 step when unbounded
        """
        if self.step_size:
            return self.step_size
        if not self.bounded:
            return UNBOUNDED_L2_STEP
        if math.isinf(self.norm):
            return 2.5 * self.eps / self.iterations
        return 2.0 * self.eps / math.sqrt(self.iterations)

    def to_dict(self):
        values = asdict(self)
        values['norm'] = 'inf' if math.isinf(self.norm) else int(self.norm)
        values['eps'] = 'inf' if not self.bounded else self.eps
        values['step'] = self.step
        return values
