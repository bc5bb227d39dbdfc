"""
Management command to run the cloud node
"""
import asyncio

from django.core.management.base import BaseCommand

from src.services.model_zoo_service.checkpoints import load_split_model
from src.services.wire_service.serializers import SessionConfig
from src.services.wire_service.servers import FrameServer
from src.services.wire_service.services import CloudService
from src.shared.constants import SERVING_MODES
from src.shared.decorators import command_errors
from src.shared.validators import validate_endpoint


class Command(BaseCommand):
    help = 'Serve the cloud slice of a checkpoint in score, hard or none output mode'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--split', type=int, required=True, help='Layer position of the split')
        parser.add_argument('--mode', choices=SERVING_MODES, default='score')
        parser.add_argument('--listen', default='127.0.0.1:9200')

    @command_errors
    def handle(self, *args, **options):
        validate_endpoint(options['listen'])
        split = load_split_model(options['checkpoint'], options['split'])
        config = SessionConfig.for_split(split, options['mode'])
        server = FrameServer(lambda: CloudService(split, config), options['listen'], name='cloud')
        self.stdout.write(self.style.SUCCESS(
            f"Cloud serving {split.model.spec.name} from layer {split.split_index} on {options['listen']} "
            f"({config.output_mode} mode, feature shape {config.feature_shape})"
        ))
        try:
            asyncio.run(server.run())
        except KeyboardInterrupt:
            self.stdout.write(self.style.WARNING('Cloud stopped'))
