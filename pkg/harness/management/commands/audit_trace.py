from django.core.management.base import BaseCommand, CommandError

from harness.experiment import audit_trace, error_returncode
from MSAccel.exceptions import OptimizationError


class Command(BaseCommand):
    help = 'Re-audit a trace written by run_experiment'

    def add_arguments(self, parser):
        parser.add_argument('trace', help='CSV trace; its JSON summary is read from the same stem')
        parser.add_argument('--data', help='objective spec, to recompute gaps against a fresh reference optimum')
        parser.add_argument('--sigma', type=float, help='override the recorded sigma')

    def handle(self, *args, **options):
        try:
            report = audit_trace(options['trace'], data=options.get('data'), sigma=options.get('sigma'))
        except OptimizationError as exc:
            raise CommandError(f'cannot audit {options["trace"]}: {exc}', returncode=error_returncode(exc))

        for name, check in report.checks.items():
            line = (
                f'{name}: {"pass" if check.passed else "FAIL"} evaluated={check.evaluated} '
                f'worst_slack={check.worst_slack:.3e} at t={check.worst_t}'
            )
            self.stdout.write(self.style.SUCCESS(line) if check.passed else self.style.ERROR(line))

        if not report.passed:
            raise CommandError(f'audit failed: {", ".join(report.failed())}', returncode=5)
        self.stdout.write(self.style.SUCCESS('Audit passed'))
