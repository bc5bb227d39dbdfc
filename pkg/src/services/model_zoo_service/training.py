"""
Training and evaluation of target classifiers
"""
import logging
from dataclasses import dataclass, field

import torch

from src.services.autograd_service.losses import softmax_cross_entropy
from src.services.autograd_service.optim import AdamState
from src.services.autograd_service.tensor import ensure_finite
from src.shared.constants import DISTILLATION_DEFAULTS
from src.shared.decorators import log_action
from src.shared.exceptions import LabelOutOfRange
from src.shared.utils import torch_generator

logger = logging.getLogger(__name__)


@dataclass
class TrainingResult:
    model: object
    accuracy_history: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)

    @property
    def final_accuracy(self):
        return self.accuracy_history[-1] if self.accuracy_history else None


@log_action('train_classifier')
def train_classifier(model, dataset, epochs, lr, seed, batch_size=DISTILLATION_DEFAULTS['BATCH_SIZE']):
    """
    Minibatch Adam on softmax cross-entropy. Returns the train-set accuracy
    measured after every epoch. Shuffling draws from a per-epoch generator.
    """
    dataset.require_items()
    if int(dataset.labels.max()) >= model.spec.class_count or int(dataset.labels.min()) < 0:
        raise LabelOutOfRange(f"Dataset labels exceed the model's {model.spec.class_count} classes")

    result = TrainingResult(model=model)
    if epochs <= 0:
        return result

    state = AdamState(list(model.parameters()), lr=lr)
    dtype = model.dtype
    model.train()
    for epoch in range(epochs):
        order = torch.randperm(len(dataset), generator=torch_generator(seed, 'shuffle', epoch))
        total, seen = 0.0, 0
        for images, labels in dataset.batches(batch_size, order):
            state.zero_grad()
            loss = softmax_cross_entropy(model(images.to(dtype)), labels)
            ensure_finite(loss.detach(), 'training loss')
            loss.backward()
            state.step()
            total += float(loss) * len(labels)
            seen += len(labels)
        accuracy = evaluate_accuracy(model, dataset)
        result.loss_history.append(total / seen)
        result.accuracy_history.append(accuracy)
        logger.info(
            f"{model.spec.name} epoch {epoch + 1}/{epochs}: loss {total / seen:.4f}, train acc {accuracy:.3f}"
        )
    model.eval()
    model.metadata.update({
        'seed': seed,
        'epochs': epochs,
        'final_accuracy': result.final_accuracy,
    })
    return result


def predict_labels(model, images, batch_size=256):
    """argmax of the logits; ties resolve to the lowest class index"""
    predictions = []
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            logits = model(images[start:start + batch_size].to(dtype))
            predictions.append(torch.argmax(logits, dim=1))
    return torch.cat(predictions) if predictions else torch.zeros(0, dtype=torch.long)


def evaluate_accuracy(model, dataset, batch_size=256):
    dataset.require_items()
    predictions = predict_labels(model, dataset.images, batch_size)
    return float((predictions == dataset.labels).sum()) / len(dataset)
