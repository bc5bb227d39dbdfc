"""
Attack sweeps over a labelled dataset and their summary statistics
"""
import logging
from dataclasses import dataclass, field
from functools import partial

from src.shared.decorators import log_action
from src.shared.exceptions import InvalidConfig
from src.shared.utils import safe_mean

from .query_attacks import AttackResult, gfcs, rgf_family, simba_ods
from .whitebox import pgd

logger = logging.getLogger(__name__)

QUERY_ATTACKS = {
    'simba-ods': simba_ods,
    'gfcs': gfcs,
    'rgf': partial(rgf_family, variant='rgf'),
    'p-rgf': partial(rgf_family, variant='p_rgf'),
    'ods-rgf': partial(rgf_family, variant='ods_rgf'),
}


@dataclass
class SweepSummary:
    method: str
    attacked: int
    excluded: int
    successes: int
    success_rate: float = None
    avg_queries: float = None
    avg_l2: float = None
    avg_linf: float = None
    fallback_rate: float = None

    def to_dict(self):
        return {
            'method': self.method,
            'attacked': self.attacked,
            'excluded': self.excluded,
            'successes': self.successes,
            'sr': self.success_rate,
            'avg_queries': self.avg_queries,
            'avg_pert_l2': self.avg_l2,
            'avg_pert_linf': self.avg_linf,
            'fallback_rate': self.fallback_rate,
        }


@dataclass
class SweepResult:
    method: str
    results: list = field(default_factory=list)

    @property
    def attacked(self):
        return [r for r in self.results if r.initially_correct]

    def summary(self):
        """
        SR over initially-correct samples; average queries and perturbation over
        successes only (None when nothing succeeded)
        """
        attacked = self.attacked
        wins = [r for r in attacked if r.success]
        rates = [r.fallback_rate for r in attacked if r.fallback_rate is not None]
        return SweepSummary(
            method=self.method,
            attacked=len(attacked),
            excluded=len(self.results) - len(attacked),
            successes=len(wins),
            success_rate=len(wins) / len(attacked) if attacked else None,
            avg_queries=safe_mean([r.queries for r in wins]) if self.method != 'pgd' else None,
            avg_l2=safe_mean([r.l2 for r in wins]),
            avg_linf=safe_mean([r.linf for r in wins]),
            fallback_rate=safe_mean(rates),
        )

    def sr_at_budget(self, budget):
        return sr_at_budget(self.results, budget)


def sr_at_budget(results, budget):
    """Share of attacked samples that succeeded within `budget` queries; monotone in budget"""
    attacked = [r for r in results if r.initially_correct]
    if not attacked:
        return None
    return sum(1 for r in attacked if r.success and r.queries <= budget) / len(attacked)


def attack_sample(method, oracle, surrogate, x, y, cfg, sample_id=None):
    """One sample, one method. PGD runs on the surrogate and its output is judged with a single uncharged query."""
    if method == 'pgd':
        adversarial = pgd(surrogate, x, [y], cfg)
        delta = adversarial - x
        response = oracle.query(adversarial)
        return AttackResult(
            sample_id=sample_id,
            success=response.label != int(y),
            queries=0,
            adversarial=adversarial,
            l2=float(delta.flatten().norm(2)),
            linf=float(delta.abs().max()),
        )
    try:
        attack = QUERY_ATTACKS[method]
    except KeyError:
        raise InvalidConfig(f"Unknown attack method '{method}'")
    return attack(oracle, surrogate, x, y, cfg, sample_id=sample_id)


@log_action('attack_sweep')
def run_attack_sweep(method, oracle, surrogate, dataset, cfg):
    """
    Attack every sample the target classifies correctly. Misclassified samples
    are recorded with initially_correct False and do not count towards SR.
    The screening query is not charged to the attack.
    """
    dataset.require_items()
    sweep = SweepResult(method)
    for i, sample_id in enumerate(dataset.ids):
        x = dataset.images[i:i + 1]
        y = int(dataset.labels[i])
        if oracle.query(x).label != y:
            sweep.results.append(AttackResult(sample_id=sample_id, adversarial=x, initially_correct=False))
            continue
        result = attack_sample(method, oracle, surrogate, x, y, cfg, sample_id=sample_id)
        sweep.results.append(result)
        logger.debug(f"{method} sample {sample_id}: success={result.success} queries={result.queries}")

    summary = sweep.summary()
    logger.info(
        f"{method}: SR {summary.success_rate} over {summary.attacked} samples "
        f"({summary.excluded} excluded), AQ {summary.avg_queries}"
    )
    return sweep
