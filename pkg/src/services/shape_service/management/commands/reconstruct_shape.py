"""
Management command to estimate the feature shape behind a capture
"""
from django.core.management.base import BaseCommand

from src.services.shape_service.estimator import covariance_block, estimate_shape
from src.services.shape_service.reports import parse_block, write_heatmap_csv, write_profile_csv
from src.services.wire_service.capture import read_capture
from src.shared.constants import SHAPE_KMAX
from src.shared.decorators import command_errors
from src.shared.exceptions import InvalidConfig


class Command(BaseCommand):
    help = 'Recover (C, H, W) candidates of intercepted features from a capture file'

    def add_arguments(self, parser):
        parser.add_argument('--capture', required=True, help='Capture file (.slkx)')
        parser.add_argument('--aspect', type=float, default=1.0, help='Assumed H / W ratio')
        parser.add_argument('--kmax', type=int, help=f'Largest lag (default min(d-1, {SHAPE_KMAX}))')
        parser.add_argument('--emit-profile', help='Write k,R,R_norm CSV here')
        parser.add_argument('--emit-heatmap', help='Write a covariance block CSV here')
        parser.add_argument('--block', help='Covariance block as i0:i1 (default the first 256 features)')

    @command_errors
    def handle(self, *args, **options):
        estimate = estimate_shape(options['capture'], aspect=options['aspect'], k_max=options['kmax'])

        self.stdout.write(f"N={estimate.n}, d={estimate.d}, aspect={estimate.aspect}")
        self.stdout.write(self.style.SUCCESS(
            f"Estimated width {estimate.width} (peak score {estimate.peak_score:.4f})"
        ))
        for rank, (c, h, w) in enumerate(estimate.candidates, start=1):
            self.stdout.write(f"  {rank}. (C, H, W) = ({c}, {h}, {w})")

        if options['emit_profile']:
            write_profile_csv(estimate.profile, options['emit_profile'])
            self.stdout.write(f"Profile written to {options['emit_profile']}")

        if options['emit_heatmap']:
            i0, i1 = parse_block(options['block']) if options['block'] else (0, min(estimate.d, 256))
            if i1 > estimate.d:
                raise InvalidConfig(f"Block end {i1} exceeds d={estimate.d}")
            block = covariance_block(read_capture(options['capture']), i0, i1)
            write_heatmap_csv(block, options['emit_heatmap'])
            self.stdout.write(f"Covariance block [{i0}, {i1}) written to {options['emit_heatmap']}")
