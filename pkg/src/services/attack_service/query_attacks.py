"""
Query-based attacks against the target: SimBA-ODS, GFCS and the RGF family.

Every attack starts with one query at the clean input and stops at the first
queried point the target misclassifies or when the query budget is spent.
"""
import logging
import math
from dataclasses import dataclass, field

import torch

from src.shared.exceptions import FeedbackUnavailable, InvalidConfig
from src.shared.utils import torch_generator

from .norms import NORM_EPS, clip_to_image, lp_norm, normalize, project
from .oracles import margin_from_logits, margin_loss
from .whitebox import input_gradient, ods_direction, surrogate_gradient

logger = logging.getLogger(__name__)

RGF_VARIANTS = ('rgf', 'p_rgf', 'ods_rgf')


@dataclass
class AttackResult:
    sample_id: object = None
    success: bool = False
    queries: int = 0
    adversarial: torch.Tensor = None
    l2: float = 0.0
    linf: float = 0.0
    initially_correct: bool = True
    trace: list = field(default_factory=list)
    gradient_steps: int = 0
    ods_steps: int = 0

    @property
    def fallback_rate(self):
        """Share of tried directions that came from ODS sampling rather than the surrogate gradient"""
        tried = self.gradient_steps + self.ods_steps
        return self.ods_steps / tried if tried else None

    def delta_norm(self, p):
        return self.linf if math.isinf(p) else self.l2


class QuerySession:
    """One sample's attack state: current perturbation, loss, budget and trace"""

    def __init__(self, oracle, surrogate, x, y, cfg):
        self.oracle = oracle
        self.surrogate = surrogate
        self.x = x.detach()
        self.y = int(y)
        self.cfg = cfg
        self.delta = torch.zeros_like(self.x)
        self.loss = None
        self.used = 0
        self.success = False
        self.trace = []
        self.gradient_steps = 0
        self.ods_steps = 0

    @property
    def point(self):
        return self.x + self.delta

    @property
    def remaining(self):
        return self.cfg.query_budget - self.used

    @property
    def exhausted(self):
        return self.success or self.remaining <= 0

    @property
    def frozen(self):
        """A zero-radius ball leaves nothing to search"""
        return self.cfg.bounded and self.cfg.eps == 0

    def objective(self, response, delta):
        """Target margin with score feedback, surrogate margin with hard feedback"""
        if self.oracle.feedback == 'score':
            return margin_loss(response, self.y)
        with torch.no_grad():
            logits = self.surrogate((self.x + delta).to(next(self.surrogate.parameters()).dtype))
        return float(margin_from_logits(logits, self.y))

    def evaluate(self, delta):
        response = self.oracle.query(self.x + delta)
        self.used += 1
        return self.objective(response, delta), response

    def start(self):
        self.loss, response = self.evaluate(self.delta)
        self.success = response.label != self.y
        self.trace.append({'query': self.used, 'loss': self.loss, 'source': 'clean'})

    def move(self, delta, loss, response, source):
        self.delta = delta
        self.loss = loss
        self.success = response.label != self.y
        self.trace.append({'query': self.used, 'loss': loss, 'source': source})

    def candidate(self, direction, sign=1.0):
        cfg = self.cfg
        delta = project(self.delta + sign * cfg.step * normalize(direction, cfg.norm), cfg.eps, cfg.norm)
        return clip_to_image(self.x, delta)

    def nearby(self, offset):
        """Current perturbation shifted by offset, kept inside the ball and the image box"""
        return clip_to_image(self.x, project(self.delta + offset, self.cfg.eps, self.cfg.norm))

    def try_direction(self, direction, signs, source):
        """Query each signed step until one lowers the loss or fools the target"""
        for sign in signs:
            if self.exhausted:
                return False
            delta = self.candidate(direction, sign)
            loss, response = self.evaluate(delta)
            if response.label != self.y or loss < self.loss:
                self.move(delta, loss, response, source)
                return True
        return False

    def result(self, sample_id=None):
        return AttackResult(
            sample_id=sample_id,
            success=self.success,
            queries=self.used,
            adversarial=self.point.detach(),
            l2=float(lp_norm(self.delta, 2).max()),
            linf=float(lp_norm(self.delta, math.inf).max()),
            trace=self.trace,
            gradient_steps=self.gradient_steps,
            ods_steps=self.ods_steps,
        )


def simba_ods(oracle, surrogate, x, y, cfg, sample_id=None):
    """Random ODS directions, trying +step then -step; a step is kept when it lowers the loss"""
    session = QuerySession(oracle, surrogate, x, y, cfg)
    session.start()
    if session.frozen:
        return session.result(sample_id)
    generator = torch_generator(cfg.seed, 'simba-ods', sample_id)
    while not session.exhausted:
        direction = ods_direction(surrogate, session.point, generator=generator)
        session.ods_steps += 1
        session.try_direction(direction, (1.0, -1.0), 'ods')
    return session.result(sample_id)


def gfcs(oracle, surrogate, x, y, cfg, sample_id=None):
    """
    Gradient first: step along the surrogate's cross-entropy gradient. When
    that fails to lower the loss, sample ODS directions until one succeeds,
    then return to the gradient.
    """
    session = QuerySession(oracle, surrogate, x, y, cfg)
    session.start()
    if session.frozen:
        return session.result(sample_id)
    generator = torch_generator(cfg.seed, 'gfcs', sample_id)
    gradient_ready = True
    while not session.exhausted:
        if gradient_ready:
            gradient_ready = False
            grad = surrogate_gradient(surrogate, session.point, [session.y])
            if float(lp_norm(grad, 2).max()) > NORM_EPS:
                session.gradient_steps += 1
                if session.try_direction(grad, (1.0,), 'gradient'):
                    gradient_ready = True
                continue
        direction = ods_direction(surrogate, session.point, generator=generator)
        session.ods_steps += 1
        gradient_ready = session.try_direction(direction, (1.0, -1.0), 'ods')
    return session.result(sample_id)


def rgf_estimate(base_loss, sample_losses, directions, sigma):
    """(1 / q) * sum_i (L(x + sigma u_i) - L(x)) / sigma * u_i"""
    weights = (torch.as_tensor(sample_losses, dtype=torch.float64) - base_loss) / sigma
    flat = directions.reshape(directions.shape[0], -1).to(torch.float64)
    return (weights[:, None] * flat).mean(dim=0).reshape(directions.shape[1:])


def estimate_gradient(loss_fn, point, directions, sigma, base_loss=None):
    """Finite-difference gradient estimate of loss_fn at point along the given directions"""
    base_loss = loss_fn(point) if base_loss is None else base_loss
    losses = [loss_fn(point + sigma * u.to(point.dtype)) for u in directions]
    return rgf_estimate(base_loss, losses, directions, sigma)


def _unit_rows(v):
    flat = v.reshape(v.shape[0], -1)
    return (flat / flat.norm(dim=1, keepdim=True).clamp_min(NORM_EPS)).reshape(v.shape)


def sample_directions(variant, count, session, generator):
    """
    [count, *x.shape] unit-l2 directions: Gaussian (rgf), Gaussian mixed with
    the surrogate gradient (p_rgf) or ODS samples (ods_rgf)
    """
    shape = session.x.shape
    if variant == 'ods_rgf':
        return torch.stack([
            ods_direction(session.surrogate, session.point, generator=generator).to(torch.float64)
            for _ in range(count)
        ])

    gaussian = _unit_rows(torch.randn(count, *shape, generator=generator, dtype=torch.float64))
    weight = session.cfg.prior_weight
    if variant == 'rgf' or weight == 0:
        return gaussian
    y = session.y
    prior = input_gradient(session.surrogate, session.point, lambda logits: margin_from_logits(logits, y))
    prior = normalize(prior.to(torch.float64), 2)
    return _unit_rows(math.sqrt(weight) * prior + math.sqrt(1.0 - weight) * gaussian)


def rgf_family(oracle, surrogate, x, y, cfg, variant='rgf', sample_id=None):
    """
    Per outer step: q sampling queries around the current point, one step
    against the estimated loss gradient, one query at the new point. A step
    is only started when all q + 1 of its queries fit in the budget, so
    queries = 1 + steps * (q + 1), unless a sampling query fools the target;
    that point becomes the result and the attack stops there.
    """
    if variant not in RGF_VARIANTS:
        raise InvalidConfig(f"Unknown RGF variant '{variant}'")
    if oracle.feedback != 'score':
        raise FeedbackUnavailable('Gradient estimation needs score feedback')
    if variant != 'rgf' and surrogate is None:
        raise InvalidConfig(f"{variant} needs a surrogate")

    session = QuerySession(oracle, surrogate, x, y, cfg)
    session.start()
    if session.frozen:
        return session.result(sample_id)
    q, sigma = cfg.rgf_samples, cfg.rgf_sigma
    generator = torch_generator(cfg.seed, 'rgf', sample_id)
    steps = 0
    while not session.success and session.remaining >= q + 1:
        directions = sample_directions(variant, q, session, generator)
        offsets, losses = [], []
        for u in directions:
            delta = session.nearby(sigma * u.to(session.x.dtype))
            loss, response = session.evaluate(delta)
            if response.label != session.y:
                session.move(delta, loss, response, f'{variant}-sample')
                break
            offsets.append((delta - session.delta).to(torch.float64) / sigma)
            losses.append(loss)
        if session.success:
            break
        # clipped samples enter the estimate with the offset actually queried
        estimate = rgf_estimate(session.loss, losses, torch.stack(offsets), sigma)
        delta = session.candidate(estimate.to(session.x.dtype), sign=-1.0)
        loss, response = session.evaluate(delta)
        session.move(delta, loss, response, variant)
        steps += 1
    result = session.result(sample_id)
    result.trace.append({'query': session.used, 'loss': session.loss, 'source': 'steps', 'steps': steps})
    return result
