"""
Management command to attack the target with a surrogate's help
"""
from django.conf import settings
from django.core.management.base import BaseCommand

from src.services.attack_service.oracles import ClientOracle, ModelOracle
from src.services.attack_service.reports import write_results_csv
from src.services.attack_service.serializers import AttackConfig
from src.services.attack_service.sweep import run_attack_sweep
from src.services.experiments_service.datasets import desk_scale_splits
from src.services.model_zoo_service.checkpoints import load_checkpoint
from src.services.wire_service.links import SocketLink
from src.services.wire_service.services import SplitClient
from src.shared.constants import ATTACK_METHODS, FEEDBACK_MODES, PGD_ITERATIONS, QUERY_BUDGET
from src.shared.decorators import command_errors
from src.shared.exceptions import InvalidConfig
from src.shared.validators import validate_endpoint


class Command(BaseCommand):
    help = 'Run PGD transfer or a query attack over the attacker evaluation set and write per-sample CSV'

    def add_arguments(self, parser):
        parser.add_argument('--method', choices=ATTACK_METHODS, required=True)
        parser.add_argument('--surrogate', help='Surrogate or classifier checkpoint (.slkc)')
        target = parser.add_mutually_exclusive_group(required=True)
        target.add_argument('--endpoint', help='Edge address of the deployed target')
        target.add_argument('--target', help='Target classifier checkpoint, queried in-process')
        parser.add_argument('--norm', default='2', help="'2' or 'inf'")
        parser.add_argument('--eps', default='1.0', help="Radius, e.g. 1.0, 8/255 or inf")
        parser.add_argument('--iters', type=int, default=PGD_ITERATIONS)
        parser.add_argument('--step', type=float, help='Step size override')
        parser.add_argument('--qmax', type=int, default=QUERY_BUDGET)
        parser.add_argument('--feedback', choices=FEEDBACK_MODES, default='score',
                            help='Output access for --target; an endpoint answers in its own mode')
        parser.add_argument('--samples', type=int, default=100)
        parser.add_argument('--seed', type=int, default=settings.SPLITLEAK_SEED)
        parser.add_argument('--out', required=True, help='Per-sample results CSV')

    @command_errors
    def handle(self, *args, **options):
        method = options['method']
        needs_surrogate = method not in ('rgf',)
        if needs_surrogate and not options['surrogate']:
            raise InvalidConfig(f"{method} needs --surrogate")
        surrogate = load_checkpoint(options['surrogate']) if options['surrogate'] else None

        cfg = AttackConfig.create(
            method=method,
            norm=options['norm'],
            eps=options['eps'],
            iterations=options['iters'],
            step_size=options['step'],
            query_budget=options['qmax'],
            feedback=options['feedback'],
            seed=options['seed'],
        )

        client = None
        if options['endpoint']:
            validate_endpoint(options['endpoint'])
            target_model = None
        else:
            target_model = load_checkpoint(options['target'], expected_kind='classifier')
        reference = surrogate or target_model
        input_size = reference.spec.input_shape[1] if reference else 16
        pool = desk_scale_splits(options['seed'], input_size=input_size)['attack']
        if not 1 <= options['samples'] <= len(pool):
            raise InvalidConfig(f"--samples must lie in [1, {len(pool)}]")
        dataset = pool.subset(range(options['samples']), name='attack')

        if options['endpoint']:
            client = SplitClient(SocketLink(options['endpoint']), dataset.image_shape)
            oracle = ClientOracle(client)
        else:
            oracle = ModelOracle(target_model, cfg.feedback)

        self.stdout.write(self.style.MIGRATE_HEADING(
            f"{method} on {len(dataset)} samples (norm={options['norm']}, eps={options['eps']}, "
            f"Q_max={cfg.query_budget}, feedback={oracle.feedback})..."
        ))
        try:
            sweep = run_attack_sweep(method, oracle, surrogate, dataset, cfg)
        finally:
            if client is not None:
                client.close()

        write_results_csv(sweep.results, options['out'])
        summary = sweep.summary()
        self.stdout.write(
            f"attacked {summary.attacked}, excluded {summary.excluded}, "
            f"avg queries {summary.avg_queries}, avg l2 {summary.avg_l2}"
        )
        self.stdout.write(self.style.SUCCESS(f"✅ SR {summary.success_rate} -> {options['out']}"))
