"""
Management command to query the deployment with attacker inputs and keep a query log
"""
from django.conf import settings
from django.core.management.base import BaseCommand

from src.services.experiments_service.datasets import desk_scale_splits
from src.services.surrogate_service.queries import issue_queries, write_query_log
from src.services.wire_service.links import SocketLink
from src.services.wire_service.services import SplitClient
from src.shared.constants import DISTILLATION_QUERIES
from src.shared.decorators import command_errors
from src.shared.exceptions import InvalidConfig
from src.shared.validators import validate_endpoint


class Command(BaseCommand):
    help = 'Send attacker inputs through the edge gateway and record the observed outputs (.slkq)'

    def add_arguments(self, parser):
        parser.add_argument('--endpoint', required=True, help='Edge address')
        parser.add_argument('--count', type=int, default=DISTILLATION_QUERIES)
        parser.add_argument('--input-size', type=int, default=16, choices=[16, 32])
        parser.add_argument('--seed', type=int, default=settings.SPLITLEAK_SEED)
        parser.add_argument('--with-labels', action='store_true', help='Store ground-truth labels too')
        parser.add_argument('--out', required=True, help='Query log path (.slkq)')

    @command_errors
    def handle(self, *args, **options):
        validate_endpoint(options['endpoint'])
        pool = desk_scale_splits(options['seed'], input_size=options['input_size'])['surrogate']
        if not 1 <= options['count'] <= len(pool):
            raise InvalidConfig(f"--count must lie in [1, {len(pool)}]")
        inputs = pool.subset(range(options['count']), name='queries')

        client = SplitClient(SocketLink(options['endpoint']), inputs.image_shape)
        try:
            mode = client.connect()
            log = issue_queries(client, inputs.images, inputs.labels if options['with_labels'] else None)
        finally:
            client.close()
        write_query_log(options['out'], log)
        self.stdout.write(self.style.SUCCESS(
            f"✅ {client.query_count} queries in {mode} mode -> {options['out']}"
        ))
