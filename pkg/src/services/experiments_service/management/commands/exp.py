"""
Management command to run one experiment and write its reports
"""
import os

from django.conf import settings
from django.core.management.base import BaseCommand

from src.services.experiments_service.experiments import run_experiment
from src.services.experiments_service.serializers import load_experiment_config
from src.shared.constants import EXPERIMENT_IDS, REFERENCE_ROWS
from src.shared.decorators import command_errors


class Command(BaseCommand):
    help = 'Run a desk-scale experiment; writes CSV, SVG, PPM dumps and manifest.json into --out'

    def add_arguments(self, parser):
        parser.add_argument('experiment', choices=EXPERIMENT_IDS)
        parser.add_argument('--config', help='key=value config file, or a manifest.json to re-run')
        parser.add_argument('--out', help=f'Output directory (default {settings.SPLITLEAK_OUTPUT_DIR}/<experiment>)')
        parser.add_argument('--seed', type=int, help='Overrides the config seed')

    @command_errors
    def handle(self, *args, **options):
        cfg = load_experiment_config(options['config'], experiment=options['experiment'], seed=options['seed'])
        out_dir = options['out'] or os.path.join(settings.SPLITLEAK_OUTPUT_DIR, cfg.experiment)

        self.stdout.write(self.style.MIGRATE_HEADING(f"Running {cfg.experiment} (seed {cfg.seed}) -> {out_dir}"))
        report, paths = run_experiment(cfg, out_dir)

        for table in report.tables:
            self.stdout.write(f"  {table.name}.csv: {len(table.rows)} rows")
        if cfg.experiment in REFERENCE_ROWS:
            self.stdout.write(f"  reference: {REFERENCE_ROWS[cfg.experiment]}")
        self.stdout.write(self.style.SUCCESS(f"✅ {len(paths)} files written to {out_dir}"))
