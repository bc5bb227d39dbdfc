"""
Experiment configuration: flat key=value files validated by a DRF serializer
"""
import json
import logging
from dataclasses import asdict, dataclass, fields

from rest_framework import serializers

from src.shared.constants import (
    ATTACK_METHODS, BATCH_SIZE_GRID, DATASET_SIZES, DISTILLATION_DEFAULTS, DISTILLATION_QUERIES,
    EXPERIMENT_IDS, L2_EPS_GRID, OUTPUT_MODES, PGD_ITERATIONS, PGD_LINF_EPS, QUERY_BUDGET,
    QUERY_BUDGET_GRID, RGF_DEFAULTS, UNBOUNDED_QUERY_BUDGET,
)
from src.shared.exceptions import InvalidConfig, IoFailure
from src.shared.validators import run_serializer

logger = logging.getLogger(__name__)

PRESETS = ['tinyvgg', 'tinyres']
SHAPE_SOURCES = ['estimate', 'true']


class CommaListField(serializers.ListField):
    """A list given either as a JSON list or as comma-separated text"""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [part.strip() for part in data.split(',') if part.strip()]
        return super().to_internal_value(data)


class ExperimentConfigSerializer(serializers.Serializer):
    experiment = serializers.ChoiceField(choices=EXPERIMENT_IDS)
    seed = serializers.IntegerField(min_value=0, default=0)

    # Data
    input_size = serializers.ChoiceField(choices=[16, 32], default=16)
    class_count = serializers.IntegerField(min_value=2, default=10)
    train_size = serializers.IntegerField(min_value=2, default=DATASET_SIZES['TRAIN'])
    surrogate_size = serializers.IntegerField(min_value=1, default=DATASET_SIZES['SURROGATE_TRAIN'])
    attack_size = serializers.IntegerField(min_value=1, default=DATASET_SIZES['ATTACK_EVAL'])

    # Target
    target_presets = CommaListField(child=serializers.ChoiceField(choices=PRESETS), min_length=1, default=['tinyres'])
    target_split = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    target_splits = CommaListField(child=serializers.IntegerField(min_value=1), default=list)
    target_epochs = serializers.IntegerField(min_value=0, default=10)
    target_lr = serializers.FloatField(default=DISTILLATION_DEFAULTS['SMOKE_LR'])

    # Surrogate
    surrogate_backbone = serializers.ChoiceField(choices=PRESETS, default='tinyvgg')
    surrogate_split = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    surrogate_splits = CommaListField(child=serializers.IntegerField(min_value=1), default=list)
    distill_queries = serializers.IntegerField(min_value=1, default=DISTILLATION_QUERIES)
    distill_epochs = serializers.IntegerField(min_value=0, default=DISTILLATION_DEFAULTS['EPOCHS'])
    distill_lr = serializers.FloatField(default=DISTILLATION_DEFAULTS['LR'])
    distill_batch_size = serializers.IntegerField(min_value=1, default=DISTILLATION_DEFAULTS['BATCH_SIZE'])
    alpha = serializers.FloatField(min_value=0.0, default=DISTILLATION_DEFAULTS['ALPHA'])
    query_alpha = serializers.FloatField(min_value=0.0, default=DISTILLATION_DEFAULTS['ALPHA_QUERY_PHASE'])
    beta = serializers.FloatField(min_value=0.0, default=DISTILLATION_DEFAULTS['BETA'])
    modes = CommaListField(child=serializers.ChoiceField(choices=OUTPUT_MODES), min_length=1, default=list(OUTPUT_MODES))
    feature_shape_source = serializers.ChoiceField(choices=SHAPE_SOURCES, default='estimate')

    # Attacks
    methods = CommaListField(child=serializers.ChoiceField(choices=ATTACK_METHODS), min_length=1,
                             default=['gfcs', 'simba-ods'])
    eps_method = serializers.ChoiceField(choices=ATTACK_METHODS, default='gfcs')
    attack_samples = serializers.IntegerField(min_value=1, default=100)
    query_budget = serializers.IntegerField(min_value=1, default=QUERY_BUDGET)
    query_budgets = CommaListField(child=serializers.IntegerField(min_value=1), min_length=1,
                                   default=list(QUERY_BUDGET_GRID))
    unbounded_query_budget = serializers.IntegerField(min_value=1, default=UNBOUNDED_QUERY_BUDGET)
    sr_eps = serializers.FloatField(min_value=0.0, default=1.0)
    eps_grid = CommaListField(child=serializers.FloatField(min_value=0.0), min_length=1, default=list(L2_EPS_GRID))
    pgd_iterations = serializers.IntegerField(min_value=1, default=PGD_ITERATIONS)
    pgd_linf_eps = serializers.FloatField(min_value=0.0, default=PGD_LINF_EPS)
    pgd_l2_eps = serializers.FloatField(min_value=0.0, default=1.0)
    rgf_samples = serializers.IntegerField(min_value=1, default=RGF_DEFAULTS['SAMPLES'])
    rgf_sigma = serializers.FloatField(default=RGF_DEFAULTS['SIGMA'])
    prior_weight = serializers.FloatField(min_value=0.0, max_value=1.0, default=RGF_DEFAULTS['PRIOR_WEIGHT'])
    dump_samples = serializers.IntegerField(min_value=0, default=4)

    # Shape study
    batch_sizes = CommaListField(child=serializers.IntegerField(min_value=1), min_length=1,
                                 default=list(BATCH_SIZE_GRID))
    shape_channels = CommaListField(child=serializers.IntegerField(min_value=1), min_length=1, default=[4, 8, 16])
    shape_widths = CommaListField(child=serializers.IntegerField(min_value=2), min_length=1, default=[4, 8, 16])
    shape_seeds = serializers.IntegerField(min_value=1, default=1)
    shape_presets = CommaListField(child=serializers.ChoiceField(choices=PRESETS), default=list)

    def validate_target_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError('Learning rate must be positive')
        return value

    validate_distill_lr = validate_target_lr

    def validate_rgf_sigma(self, value):
        if value <= 0:
            raise serializers.ValidationError('Smoothing sigma must be positive')
        return value

    def validate(self, data):
        if data['alpha'] + data['beta'] <= 0 or data['query_alpha'] + data['beta'] <= 0:
            raise serializers.ValidationError('alpha + beta must be positive')
        if data['attack_samples'] > data['attack_size']:
            raise serializers.ValidationError('attack_samples exceeds the attack-eval half')
        if data['distill_queries'] > data['surrogate_size']:
            raise serializers.ValidationError('distill_queries exceeds the surrogate-train half')
        return data


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    input_size: int
    class_count: int
    train_size: int
    surrogate_size: int
    attack_size: int
    target_presets: tuple
    target_split: int
    target_splits: tuple
    target_epochs: int
    target_lr: float
    surrogate_backbone: str
    surrogate_split: int
    surrogate_splits: tuple
    distill_queries: int
    distill_epochs: int
    distill_lr: float
    distill_batch_size: int
    alpha: float
    query_alpha: float
    beta: float
    modes: tuple
    feature_shape_source: str
    methods: tuple
    eps_method: str
    attack_samples: int
    query_budget: int
    query_budgets: tuple
    unbounded_query_budget: int
    sr_eps: float
    eps_grid: tuple
    pgd_iterations: int
    pgd_linf_eps: float
    pgd_l2_eps: float
    rgf_samples: int
    rgf_sigma: float
    prior_weight: float
    dump_samples: int
    batch_sizes: tuple
    shape_channels: tuple
    shape_widths: tuple
    shape_seeds: int
    shape_presets: tuple

    @classmethod
    def create(cls, **data):
        values = run_serializer(ExperimentConfigSerializer, data)
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @property
    def dataset_sizes(self):
        return {
            'TRAIN': self.train_size,
            'SURROGATE_TRAIN': self.surrogate_size,
            'ATTACK_EVAL': self.attack_size,
        }

    def replace(self, **changes):
        return ExperimentConfig.create(**{**self.to_dict(), **changes})

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_config_text(self):
        """Inverse of parse_config_text, one key per line in field order"""
        lines = []
        for key, value in self.to_dict().items():
            if value is None:
                continue
            if isinstance(value, list):
                value = ','.join(str(v) for v in value)
            lines.append(f"{key}={value}")
        return '\n'.join(lines) + '\n'


def parse_config_text(text):
    """key=value lines; blank lines and # comments are ignored. Unknown or repeated keys are errors."""
    known = set(ExperimentConfig.field_names())
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise InvalidConfig(f"Line {number} is not key=value: {raw!r}")
        if key not in known:
            raise InvalidConfig(f"Unknown config key '{key}' on line {number}", {'key': key})
        if key in values:
            raise InvalidConfig(f"Config key '{key}' repeated on line {number}", {'key': key})
        values[key] = value
    return values


def load_experiment_config(path=None, **overrides):
    """
    Read a key=value file, or the config block of a run manifest (.json),
    and apply overrides on top
    """
    values = {}
    if path:
        try:
            with open(path, encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise IoFailure(f"Cannot read experiment config {path}: {e}")
        if str(path).endswith('.json'):
            try:
                values = json.loads(text)['config']
            except (ValueError, KeyError, TypeError) as e:
                raise InvalidConfig(f"{path} is not a run manifest: {e}")
            unknown = set(values) - set(ExperimentConfig.field_names())
            if unknown:
                raise InvalidConfig(f"Unknown config keys in manifest: {sorted(unknown)}")
        else:
            values = parse_config_text(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig.create(**values)
    logger.info(f"Experiment config for {cfg.experiment}: seed {cfg.seed}, {len(values)} explicit keys")
    return cfg
