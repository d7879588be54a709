from pathlib import Path

import yaml
from django.core.management.base import BaseCommand, CommandError

from harness.experiment import run_benchmark
from harness.management.commands.run_experiment import format_errors
from harness.serializers import ExperimentConfigSerializer
from MSAccel.exceptions import ConfigError


class Command(BaseCommand):
    help = 'Run a YAML list of experiment configs, one worker per config'

    def add_arguments(self, parser):
        parser.add_argument('matrix', help='YAML file: a list of configs, or a mapping with a "runs" list')
        parser.add_argument('--jobs', type=int, default=1)
        parser.add_argument('--out-dir', dest='out_dir', help='relative --out paths are placed here')

    def load_matrix(self, path):
        try:
            with open(path, encoding='utf-8') as handle:
                matrix = yaml.safe_load(handle)
        except OSError as exc:
            raise CommandError(f'cannot read {path}: {exc}', returncode=2)
        except yaml.YAMLError as exc:
            raise CommandError(f'{path} is not valid YAML: {exc}', returncode=3)
        if isinstance(matrix, dict):
            matrix = matrix.get('runs')
        if not isinstance(matrix, list) or not all(isinstance(entry, dict) for entry in matrix):
            raise CommandError(f'{path} must hold a list of config mappings', returncode=3)
        return matrix

    def handle(self, *args, **options):
        entries = self.load_matrix(options['matrix'])
        if options['jobs'] < 1:
            raise CommandError('--jobs must be at least 1', returncode=2)

        configs = []
        for index, entry in enumerate(entries):
            entry = {key.replace('-', '_'): value for key, value in entry.items()}
            if options.get('out_dir') and entry.get('out') and not Path(entry['out']).is_absolute():
                entry['out'] = str(Path(options['out_dir']) / entry['out'])
            serializer = ExperimentConfigSerializer(data=entry)
            if not serializer.is_valid():
                raise CommandError(f'entry {index}: {format_errors(serializer.errors)}', returncode=2)
            configs.append(serializer.save())

        try:
            results = run_benchmark(configs, jobs=options['jobs'])
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=2)

        failures = audit_failures = 0
        for cfg, outcome in zip(configs, results):
            label = f'{cfg.method}{"+" + cfg.oracle if cfg.oracle else ""} on {cfg.data.label()}'
            if outcome['status'] == 'error':
                failures += 1
                self.stdout.write(self.style.ERROR(f'{label}: error {outcome["error"]}'))
                continue
            if outcome['audit'] == 'fail':
                audit_failures += 1
            self.stdout.write(
                f'{label}: status={outcome["status"]} final_gap={outcome["final_gap"]}'
                + ('' if outcome['audit'] is None else f' audit={outcome["audit"]}')
            )

        if failures:
            raise CommandError(f'{failures} of {len(configs)} runs failed', returncode=4)
        if audit_failures:
            raise CommandError(f'{audit_failures} of {len(configs)} audits failed', returncode=5)
        self.stdout.write(self.style.SUCCESS(f'Benchmark finished: {len(configs)} runs'))
