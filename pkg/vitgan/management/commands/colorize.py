from vitgan import services
from vitgan.management.base import VitganCommand


class Command(VitganCommand):
    help = 'Colourise an image or a directory of images with a trained checkpoint'

    def add_arguments(self, parser):
        parser.add_argument('--ckpt', required=True, help='Training checkpoint')
        parser.add_argument('--in', dest='input', required=True, help='Image file or directory')
        parser.add_argument('--out', required=True, help='Output directory')

    def run(self, *args, **options):
        report = services.colorize_paths(options['ckpt'], options['input'], options['out'])

        for name, seconds in report.timings:
            self.stdout.write(f'{name}: {seconds:.3f}s')
        for path in report.skipped:
            self.stdout.write(self.style.WARNING(f'Skipped unreadable {path}'))
        if report.out_of_gamut:
            self.stdout.write(f'{report.out_of_gamut} out-of-gamut pixels clamped')
        self.stdout.write(self.style.SUCCESS(
            f'Colourised {len(report.written)} images in {report.seconds:.3f}s ({len(report.skipped)} skipped)'
        ))
