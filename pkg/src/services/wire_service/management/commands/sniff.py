"""
Management command to run the passive tap and write a capture file
"""
import asyncio

from django.core.management.base import BaseCommand

from src.services.wire_service.servers import TapRelay
from src.services.wire_service.services import Sniffer
from src.shared.decorators import command_errors
from src.shared.validators import validate_endpoint


class Command(BaseCommand):
    help = 'Relay the edge-to-cloud link unchanged and record every feature frame payload'

    def add_arguments(self, parser):
        parser.add_argument('--tap', required=True, help='Address the edge connects to')
        parser.add_argument('--upstream', required=True, help='Real cloud address')
        parser.add_argument('--out', required=True, help='Capture file (.slkx)')
        parser.add_argument('--limit', type=int, help='Stop after this many feature rows')

    @command_errors
    def handle(self, *args, **options):
        validate_endpoint(options['tap'])
        validate_endpoint(options['upstream'])
        sniffer = Sniffer(limit=options['limit'])
        relay = TapRelay(sniffer, options['tap'], options['upstream'])
        self.stdout.write(self.style.WARNING(
            f"Tapping {options['tap']} -> {options['upstream']} (Ctrl+C to stop)"
        ))
        try:
            asyncio.run(relay.run())
        except KeyboardInterrupt:
            pass
        sniffer.save(options['out'])
        self.stdout.write(self.style.SUCCESS(
            f"✅ Captured N={sniffer.count}, d={sniffer.dim} -> {options['out']}"
        ))
