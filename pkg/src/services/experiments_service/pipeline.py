"""
The seeded desk-scale world shared by all experiments: datasets, trained
targets behind simulated deployments, intercepted query data and distilled
surrogates. Everything is built lazily and cached per run.
"""
import logging

import torch

from src.services.attack_service.oracles import ClientOracle
from src.services.attack_service.serializers import AttackConfig
from src.services.attack_service.whitebox import evaluate_transfer, pgd
from src.services.model_zoo_service.models import build_model
from src.services.model_zoo_service.specs import get_preset, split_after_block
from src.services.model_zoo_service.split import split_at
from src.services.model_zoo_service.training import evaluate_accuracy, train_classifier
from src.services.shape_service.estimator import estimate_from_matrix
from src.services.surrogate_service.distillation import train_surrogate
from src.services.surrogate_service.models import assemble_surrogate, baseline_surrogate
from src.services.surrogate_service.queries import build_query_dataset, issue_queries
from src.services.surrogate_service.serializers import DistillationConfig
from src.services.wire_service.deployment import SimulatedDeployment
from src.shared.exceptions import DatasetEmpty, SplitLeakError
from src.shared.utils import derive_seed

from .datasets import desk_scale_splits

logger = logging.getLogger(__name__)


def serving_mode(mode):
    """Deployment output mode during distillation: label-only attackers see nothing from the target"""
    return 'none' if mode == 'label' else mode


def feedback_mode(mode):
    """Attack-time feedback; label-only attackers still observe the predicted class"""
    return 'score' if mode == 'score' else 'hard'


def block_of(spec, split_index):
    """1-based block whose output sits at or before a layer position"""
    return max(1, sum(1 for end in spec.block_ends if end <= split_index))


class Workbench:
    def __init__(self, cfg):
        self.cfg = cfg
        self._splits = None
        self._targets = {}
        self._query_data = {}
        self._surrogates = {}

    # Data

    @property
    def splits(self):
        if self._splits is None:
            cfg = self.cfg
            self._splits = desk_scale_splits(
                cfg.seed, input_size=cfg.input_size, class_count=cfg.class_count, sizes=cfg.dataset_sizes,
            )
            overlap = set(self._splits['surrogate'].ids) & set(self._splits['attack'].ids)
            if overlap:
                raise DatasetEmpty(f"Surrogate and attack halves share {len(overlap)} samples")
        return self._splits

    def attack_set(self):
        pool = self.splits['attack']
        return pool.subset(range(min(self.cfg.attack_samples, len(pool))), name='attack-eval')

    # Targets

    def target_spec(self, preset):
        return get_preset(preset, input_size=self.cfg.input_size, class_count=self.cfg.class_count)

    def target(self, preset):
        if preset not in self._targets:
            cfg = self.cfg
            model = build_model(self.target_spec(preset), seed=derive_seed(cfg.seed, 'target', preset))
            train_classifier(model, self.splits['train'], cfg.target_epochs, cfg.target_lr, cfg.seed)
            accuracy = evaluate_accuracy(model, self.attack_set())
            model.metadata['attack_accuracy'] = accuracy
            logger.info(f"Target {preset}: clean accuracy {accuracy:.3f} on the attack set")
            self._targets[preset] = model
        return self._targets[preset]

    def default_target_split(self, preset):
        return self.cfg.target_split or split_after_block(self.target_spec(preset), 2)

    def target_splits(self, preset):
        return list(self.cfg.target_splits) or list(self.target_spec(preset).block_ends)

    # Surrogates

    def backbone_spec(self):
        return get_preset(self.cfg.surrogate_backbone, input_size=self.cfg.input_size, class_count=self.cfg.class_count)

    def matched_surrogate_split(self, preset, tsplit):
        """Surrogate split at the same block depth as the target split"""
        if self.cfg.surrogate_split:
            return self.cfg.surrogate_split
        backbone = self.backbone_spec()
        block = min(block_of(self.target_spec(preset), tsplit), len(backbone.block_ends))
        return split_after_block(backbone, block)

    def surrogate_splits(self):
        return list(self.cfg.surrogate_splits) or list(self.backbone_spec().block_ends)

    def estimated_shape(self, capture, split):
        if self.cfg.feature_shape_source == 'true':
            return tuple(split.feature_shape)
        try:
            return tuple(estimate_from_matrix(capture).shape)
        except SplitLeakError as e:
            logger.warning(f"Shape estimation failed ({e.error_code}); treating features as ({capture.shape[1]}, 1, 1)")
            return (capture.shape[1], 1, 1)

    def query_data(self, preset, tsplit, mode):
        """Distillation queries through a tapped deployment; the sniffer sees one feature row per query"""
        key = (preset, tsplit, mode)
        if key not in self._query_data:
            split = split_at(self.target(preset), tsplit)
            deployment = SimulatedDeployment(split, serving_mode(mode), tap=True)
            client = deployment.open_session()
            pool = self.splits['surrogate'].subset(range(self.cfg.distill_queries), name='distill')
            try:
                log = issue_queries(client, pool.images, pool.labels if mode == 'label' else None)
            finally:
                client.close()
            capture = deployment.sniffer.capture()
            shape = self.estimated_shape(capture, split)
            logger.info(f"{preset} split {tsplit} ({mode}): {len(log)} queries, feature shape {shape}")
            self._query_data[key] = build_query_dataset(log, capture, shape)
        return self._query_data[key]

    def surrogate(self, preset, tsplit, ssplit, mode, fd, alpha=None):
        """FD surrogate (adapted, alpha > 0) or the plain output-only baseline"""
        cfg = self.cfg
        alpha = cfg.alpha if alpha is None else alpha
        key = (preset, tsplit, ssplit if fd else None, mode, fd, alpha if fd else 0.0)
        if key not in self._surrogates:
            data = self.query_data(preset, tsplit, mode)
            seed = derive_seed(cfg.seed, 'surrogate')
            backbone = self.backbone_spec()
            if fd:
                model = assemble_surrogate(backbone, ssplit, data.feature_shape, seed)
            else:
                model = baseline_surrogate(backbone, ssplit, seed)
            distill = DistillationConfig.create(
                alpha=alpha if fd else 0.0,
                beta=cfg.beta,
                output_mode=mode,
                lr=cfg.distill_lr,
                epochs=cfg.distill_epochs,
                batch_size=cfg.distill_batch_size,
                seed=cfg.seed,
            )
            train_surrogate(model, data, distill)
            model.eval()
            self._surrogates[key] = model
        return self._surrogates[key]

    # Attacks

    def oracle(self, preset, tsplit, mode):
        """A fresh session on an untapped deployment answering in the attack feedback mode"""
        split = split_at(self.target(preset), tsplit)
        return ClientOracle(SimulatedDeployment(split, feedback_mode(mode)).open_session())

    def attack_config(self, **overrides):
        cfg = self.cfg
        values = {
            'seed': cfg.seed,
            'iterations': cfg.pgd_iterations,
            'query_budget': cfg.query_budget,
            'rgf_samples': cfg.rgf_samples,
            'rgf_sigma': cfg.rgf_sigma,
            'prior_weight': cfg.prior_weight,
        }
        values.update(overrides)
        return AttackConfig.create(**values)

    def transfer(self, target, surrogate, dataset, attack_cfg):
        """PGD on the surrogate over the whole attack set; share of it the target then misclassifies"""
        images, labels = dataset.images, dataset.labels
        adversarial = torch.cat([
            pgd(surrogate, images[i:i + 64], labels[i:i + 64], attack_cfg)
            for i in range(0, len(labels), 64)
        ])
        return evaluate_transfer(target, adversarial, labels)
