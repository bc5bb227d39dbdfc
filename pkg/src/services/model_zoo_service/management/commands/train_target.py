"""
Management command to train a desk-scale target classifier
"""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand

from src.services.experiments_service.datasets import desk_scale_splits, load_cifar10_binary
from src.services.model_zoo_service.checkpoints import save_checkpoint
from src.services.model_zoo_service.models import build_model, describe
from src.services.model_zoo_service.specs import get_preset
from src.services.model_zoo_service.training import evaluate_accuracy, train_classifier
from src.shared.decorators import command_errors

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Train a TinyVGG/TinyRes target model and write it as a checkpoint'

    def add_arguments(self, parser):
        parser.add_argument('--preset', default='tinyvgg', help='tinyvgg or tinyres')
        parser.add_argument('--input-size', type=int, default=16, choices=[16, 32])
        parser.add_argument('--epochs', type=int, default=10)
        parser.add_argument('--lr', type=float, default=1e-3)
        parser.add_argument('--seed', type=int, default=settings.SPLITLEAK_SEED)
        parser.add_argument('--cifar10-dir', help='Train on CIFAR-10 binary batches instead of synthetic data')
        parser.add_argument('--out', required=True, help='Checkpoint path (.slkc)')

    @command_errors
    def handle(self, *args, **options):
        spec = get_preset(options['preset'], input_size=options['input_size'])
        model = build_model(spec, options['seed'])
        for line in describe(model):
            self.stdout.write(line)

        if options['cifar10_dir']:
            train = load_cifar10_binary(options['cifar10_dir'], train=True)
            held_out = load_cifar10_binary(options['cifar10_dir'], train=False)
        else:
            splits = desk_scale_splits(options['seed'], input_size=options['input_size'])
            train, held_out = splits['train'], splits['attack']

        self.stdout.write(self.style.MIGRATE_HEADING(
            f"Training {spec.name} on {len(train)} samples for {options['epochs']} epochs..."
        ))
        result = train_classifier(model, train, options['epochs'], options['lr'], options['seed'])
        accuracy = evaluate_accuracy(model, held_out)
        save_checkpoint(model, options['out'], metadata={
            'held_out_accuracy': accuracy,
            'lr': options['lr'],
            'dataset': train.name,
        })
        self.stdout.write(self.style.SUCCESS(
            f"✅ {spec.name}: train acc {result.final_accuracy}, held-out acc {accuracy:.3f} -> {options['out']}"
        ))
