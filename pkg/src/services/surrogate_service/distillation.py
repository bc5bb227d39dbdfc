"""
Combined feature/output distillation of a partitioned surrogate
"""
import logging
from dataclasses import dataclass, field

import torch

from src.services.autograd_service.losses import kl_divergence, mse, softmax_cross_entropy
from src.services.autograd_service.optim import AdamState
from src.shared.decorators import log_action
from src.shared.exceptions import DivergedLoss, MissingSupervision
from src.shared.utils import torch_generator

logger = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    """total = alpha * features + beta * output; a zero-weight term is not computed"""
    total: torch.Tensor
    features: torch.Tensor = None
    output: torch.Tensor = None


@dataclass
class DistillationResult:
    model: object
    history: list = field(default_factory=list)

    @property
    def total_history(self):
        return [row['total'] for row in self.history]


def output_loss(logits, batch, mode):
    target = batch.supervision(mode)
    if mode == 'score':
        return kl_divergence(target.to(logits.dtype), logits)
    return softmax_cross_entropy(logits, target)


def distillation_loss(g, batch, cfg):
    x = batch.inputs.to(g.dtype)
    edge = g.forward_edge(x)

    features = output = None
    if cfg.alpha > 0:
        if batch.features is None:
            raise MissingSupervision('Feature distillation needs captured features', {'mode': 'features'})
        features = mse(batch.features.to(g.dtype), edge)
    if cfg.beta > 0:
        output = output_loss(g.forward_cloud(edge), batch, cfg.output_mode)

    if features is None:
        total = cfg.beta * output
    elif output is None:
        total = cfg.alpha * features
    else:
        total = cfg.alpha * features + cfg.beta * output
    return LossBreakdown(total=total, features=features, output=output)


def _check_supervision(dataset, cfg):
    if cfg.alpha > 0 and dataset.features is None:
        raise MissingSupervision('Feature distillation needs captured features', {'mode': 'features'})
    if cfg.beta > 0:
        dataset.supervision(cfg.output_mode)


@log_action('train_surrogate')
def train_surrogate(g, dataset, cfg):
    """
    Adam over every surrogate parameter (backbone and adaptation module).
    History rows hold the per-epoch sample-weighted mean of each loss term.
    """
    dataset.require_items()
    _check_supervision(dataset, cfg)
    result = DistillationResult(model=g)
    if cfg.epochs == 0:
        return result

    state = AdamState(list(g.parameters()), lr=cfg.lr)
    g.train()
    for epoch in range(cfg.epochs):
        order = torch.randperm(len(dataset), generator=torch_generator(cfg.seed, 'distill', epoch))
        sums = {'total': 0.0, 'features': 0.0, 'output': 0.0}
        for batch in dataset.batches(cfg.batch_size, order):
            state.zero_grad()
            loss = distillation_loss(g, batch, cfg)
            if not torch.isfinite(loss.total):
                g.eval()
                raise DivergedLoss(
                    f"Distillation loss became {float(loss.total)} in epoch {epoch + 1}",
                    {'epoch': epoch + 1, 'lr': cfg.lr},
                )
            loss.total.backward()
            state.step()
            weight = len(batch)
            sums['total'] += float(loss.total) * weight
            if loss.features is not None:
                sums['features'] += float(loss.features) * weight
            if loss.output is not None:
                sums['output'] += float(loss.output) * weight

        row = {'epoch': epoch + 1, **{key: value / len(dataset) for key, value in sums.items()}}
        result.history.append(row)
        logger.info(
            f"Surrogate epoch {row['epoch']}/{cfg.epochs}: total {row['total']:.4f} "
            f"(features {row['features']:.4f}, output {row['output']:.4f})"
        )
    g.eval()
    g.metadata.update({
        'alpha': cfg.alpha,
        'beta': cfg.beta,
        'output_mode': cfg.output_mode,
        'lr': cfg.lr,
        'epochs': cfg.epochs,
        'seed': cfg.seed,
        'final_loss': result.history[-1]['total'],
    })
    return result
