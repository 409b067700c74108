from vitgan import services
from vitgan.management.base import VitganCommand


class Command(VitganCommand):
    help = 'List recent training runs and FID evaluations'

    def add_arguments(self, parser):
        parser.add_argument('--limit', type=int, default=10)

    def run(self, *args, **options):
        runs = services.recent_runs(options['limit'])
        evaluations = services.recent_evaluations(options['limit'])

        self.stdout.write('Training runs:')
        if not runs:
            self.stdout.write('  (none)')
        for run in runs:
            self.stdout.write(
                f'  {run.started_at:%Y-%m-%d %H:%M} {run.status:<9} {run.variant:<9} '
                f'seed={run.seed} steps={run.steps} {run.run_dir}'
            )

        self.stdout.write('FID evaluations:')
        if not evaluations:
            self.stdout.write('  (none)')
        for evaluation in evaluations:
            self.stdout.write(
                f'  {evaluation.evaluated_at:%Y-%m-%d %H:%M} {evaluation.value:.6f} ({evaluation.backend}) '
                f'{evaluation.real_path} vs {evaluation.generated_path}'
            )
