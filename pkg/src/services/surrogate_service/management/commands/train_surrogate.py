"""
Management command to distill a partitioned surrogate from a capture and a query log
"""
from django.conf import settings
from django.core.management.base import BaseCommand

from src.services.model_zoo_service.checkpoints import save_checkpoint
from src.services.model_zoo_service.specs import get_preset
from src.services.shape_service.estimator import estimate_shape
from src.services.surrogate_service.distillation import train_surrogate
from src.services.surrogate_service.models import assemble_surrogate, baseline_surrogate
from src.services.surrogate_service.queries import build_query_dataset, read_query_log
from src.services.surrogate_service.serializers import DistillationConfig
from src.services.wire_service.capture import read_capture
from src.shared.constants import DISTILLATION_DEFAULTS, OUTPUT_MODES
from src.shared.decorators import command_errors
from src.shared.validators import parse_shape


class Command(BaseCommand):
    help = 'Train a surrogate with feature distillation (alpha > 0) or output-only distillation (alpha = 0)'

    def add_arguments(self, parser):
        parser.add_argument('--backbone', default='tinyvgg', help='Backbone preset')
        parser.add_argument('--split', type=int, required=True, help='Layer position of the surrogate split')
        parser.add_argument('--capture', required=True, help='Capture file (.slkx) aligned with the query log')
        parser.add_argument('--queries', required=True, help='Query log (.slkq)')
        parser.add_argument('--mode', choices=OUTPUT_MODES, default='score')
        parser.add_argument('--alpha', type=float, default=DISTILLATION_DEFAULTS['ALPHA'])
        parser.add_argument('--beta', type=float, default=DISTILLATION_DEFAULTS['BETA'])
        parser.add_argument('--epochs', type=int, default=DISTILLATION_DEFAULTS['EPOCHS'])
        parser.add_argument('--lr', type=float, default=DISTILLATION_DEFAULTS['LR'])
        parser.add_argument('--batch-size', type=int, default=DISTILLATION_DEFAULTS['BATCH_SIZE'])
        parser.add_argument('--seed', type=int, default=settings.SPLITLEAK_SEED)
        parser.add_argument('--aspect', type=float, default=1.0, help='Assumed H / W of the features')
        parser.add_argument('--kmax', type=int)
        parser.add_argument('--feature-shape', help='Skip estimation and use this C,H,W')
        parser.add_argument('--out', required=True, help='Surrogate checkpoint (.slkc)')

    @command_errors
    def handle(self, *args, **options):
        cfg = DistillationConfig.create(
            alpha=options['alpha'],
            beta=options['beta'],
            output_mode=options['mode'],
            lr=options['lr'],
            epochs=options['epochs'],
            batch_size=options['batch_size'],
            seed=options['seed'],
        )
        log = read_query_log(options['queries'])

        if options['feature_shape']:
            feature_shape = parse_shape(options['feature_shape'])
        else:
            estimate = estimate_shape(options['capture'], aspect=options['aspect'], k_max=options['kmax'])
            feature_shape = estimate.shape
            self.stdout.write(f"Estimated feature shape {feature_shape} (width peak {estimate.peak_score:.4f})")
        dataset = build_query_dataset(log, read_capture(options['capture']), feature_shape)

        c, h, w = log.inputs.shape[1:]
        spec = get_preset(options['backbone'], input_size=h, in_channels=c)
        if cfg.alpha > 0:
            surrogate = assemble_surrogate(spec, options['split'], feature_shape, cfg.seed)
        else:
            surrogate = baseline_surrogate(spec, options['split'], cfg.seed)

        self.stdout.write(self.style.MIGRATE_HEADING(
            f"Distilling {spec.name} split {options['split']} on {len(dataset)} queries "
            f"(alpha={cfg.alpha}, beta={cfg.beta}, mode={cfg.output_mode})..."
        ))
        result = train_surrogate(surrogate, dataset, cfg)
        save_checkpoint(surrogate, options['out'], metadata={'feature_shape': list(feature_shape)})
        final = result.history[-1]['total'] if result.history else None
        self.stdout.write(self.style.SUCCESS(f"✅ Surrogate saved to {options['out']} (final loss {final})"))
