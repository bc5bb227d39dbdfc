"""
Query access to the target. Every call to ``query`` is one target forward
and counts as exactly one query.
"""
import logging
from dataclasses import dataclass

import torch

from src.shared.exceptions import FeedbackUnavailable

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-30


@dataclass
class Response:
    label: int
    probs: torch.Tensor = None


def margin_from_logits(logits, label):
    """logit_y - max_{j != y} logit_j for a single row; negative once misclassified"""
    logits = logits.reshape(-1)
    others = torch.cat([logits[:label], logits[label + 1:]])
    return logits[label] - others.max()


def margin_loss(response, label):
    """Margin in log-probability space; needs score feedback"""
    if response.probs is None:
        raise FeedbackUnavailable('Margin loss needs the target probabilities')
    log_probs = torch.log(response.probs.to(torch.float64).clamp_min(LOG_FLOOR))
    return float(margin_from_logits(log_probs, label))


class TargetOracle:
    feedback = 'score'

    def __init__(self):
        self.queries = 0

    def query(self, x):
        self.queries += 1
        return self.respond(x)

    def respond(self, x):
        raise NotImplementedError


class ModelOracle(TargetOracle):
    """In-process target; probabilities are rounded to binary32 like the wire reply"""

    def __init__(self, model, feedback='score'):
        super().__init__()
        if feedback not in ('score', 'hard'):
            raise FeedbackUnavailable(f"Attacks cannot run on '{feedback}' feedback")
        self.model = model
        self.feedback = feedback

    def respond(self, x):
        x = x.reshape(1, *x.shape[-3:])
        probs = self.model.predict_proba(x)[0].float()
        label = int(torch.argmax(probs))
        return Response(label=label, probs=probs if self.feedback == 'score' else None)


class ClientOracle(TargetOracle):
    """The deployment seen through a split client; feedback is the session's output mode"""

    def __init__(self, client):
        super().__init__()
        self.client = client
        mode = client.mode or client.connect()
        if mode not in ('score', 'hard'):
            raise FeedbackUnavailable(f"The target answers in '{mode}' mode and reveals no output")
        self.feedback = mode

    def respond(self, x):
        observation = self.client.infer(x.reshape(*x.shape[-3:]).float())
        if observation.probs is not None:
            probs = torch.from_numpy(observation.probs)
            return Response(label=int(torch.argmax(probs)), probs=probs)
        return Response(label=int(observation.label))
