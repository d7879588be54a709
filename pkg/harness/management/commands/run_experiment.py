from django.core.management.base import BaseCommand, CommandError

from harness.experiment import error_returncode, run_experiment
from harness.serializers import ExperimentConfigSerializer
from MSAccel.exceptions import OptimizationError


def format_errors(errors):
    parts = []
    for field, messages in errors.items():
        text = '; '.join(str(m) for m in messages) if isinstance(messages, list) else str(messages)
        parts.append(text if field == 'non_field_errors' else f'{field}: {text}')
    return ', '.join(parts)


def add_experiment_arguments(parser):
    parser.add_argument('--method', required=True, help='OPTMS, MS or a baseline (CR, ACR, NEWTON, GD, AGD, SONG, ITERATE_AMSN, ITERATE_AMSN_FO)')
    parser.add_argument('--oracle', help='AMSN, AMSN_FO, CR or GD (OPTMS and MS only)')
    parser.add_argument('--data', required=True, help='LIBSVM path, synthetic:n=,d=,seed=, worst-case:d= or quadratic:<file.npz>')
    parser.add_argument('--alpha', type=float)
    parser.add_argument('--sigma', type=float)
    parser.add_argument('--lambda0', type=float)
    parser.add_argument('--eta', type=float, help='step size; GD and AGD tune over the grid when omitted')
    parser.add_argument('--M', type=float)
    parser.add_argument('--H', type=float)
    parser.add_argument('--h-scale', dest='h_scale', type=float, help='H = scale * H-bar when --H is omitted')
    parser.add_argument('--rho', type=float)
    parser.add_argument('--damping', default='on', help='on, off or argmin')
    parser.add_argument('--lazy', help='on or off; defaults to on for OPTMS and off otherwise')
    parser.add_argument('--budget-calls', dest='budget_calls', type=int)
    parser.add_argument('--max-seconds', dest='max_seconds', type=float)
    parser.add_argument('--target-gap', dest='target_gap', type=float)
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--out', help='CSV trace path; the JSON summary goes next to it')
    parser.add_argument('--audit', action='store_true')


class Command(BaseCommand):
    help = 'Run one experiment and write its CSV trace and JSON summary'

    def add_arguments(self, parser):
        add_experiment_arguments(parser)

    def handle(self, *args, **options):
        fields = ExperimentConfigSerializer().fields
        payload = {name: options[name] for name in fields if options.get(name) is not None}
        serializer = ExperimentConfigSerializer(data=payload)
        if not serializer.is_valid():
            raise CommandError(f'invalid configuration: {format_errors(serializer.errors)}', returncode=2)
        cfg = serializer.save()

        try:
            result = run_experiment(cfg)
        except OptimizationError as exc:
            raise CommandError(f'{cfg.method} failed: {exc}', returncode=error_returncode(exc))

        summary = result.summary
        self.stdout.write(
            f'{summary["method"]} on {summary["data"]}: status={summary["status"]} '
            f'iterations={summary["iterations"]} oracle_calls={summary["oracle_calls"]} '
            f'final_gap={summary["final_gap"]}'
        )
        if result.csv_path:
            self.stdout.write(f'Trace written to {result.csv_path} (summary {result.json_path})')

        report = result.report
        if report is not None:
            for name, check in report.checks.items():
                line = f'  {name}: {"pass" if check.passed else "FAIL"} worst_slack={check.worst_slack:.3e} at t={check.worst_t}'
                self.stdout.write(self.style.SUCCESS(line) if check.passed else self.style.ERROR(line))
            if not report.passed:
                raise CommandError(f'audit failed: {", ".join(report.failed())}', returncode=5)
        self.stdout.write(self.style.SUCCESS('Experiment finished'))
