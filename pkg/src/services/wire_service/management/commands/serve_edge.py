"""
Management command to run the edge node
"""
import asyncio

from django.core.management.base import BaseCommand

from src.services.model_zoo_service.checkpoints import load_split_model
from src.services.wire_service.links import SocketLink
from src.services.wire_service.servers import FrameServer
from src.services.wire_service.services import EdgeService
from src.shared.decorators import command_errors
from src.shared.validators import validate_endpoint


class Command(BaseCommand):
    help = 'Serve the edge slice of a checkpoint; features are forwarded to --upstream'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--split', type=int, required=True, help='Layer position of the split')
        parser.add_argument('--listen', default='127.0.0.1:9100')
        parser.add_argument('--upstream', default='127.0.0.1:9200', help='Cloud node or a tap in front of it')

    @command_errors
    def handle(self, *args, **options):
        validate_endpoint(options['listen'])
        validate_endpoint(options['upstream'])
        split = load_split_model(options['checkpoint'], options['split'])
        server = FrameServer(
            lambda: EdgeService(split, SocketLink(options['upstream'])),
            options['listen'],
            name='edge',
        )
        self.stdout.write(self.style.SUCCESS(
            f"Edge serving {split.model.spec.name} layers [0, {split.split_index}) on {options['listen']}, "
            f"upstream {options['upstream']}"
        ))
        try:
            asyncio.run(server.run())
        except KeyboardInterrupt:
            self.stdout.write(self.style.WARNING('Edge stopped'))
