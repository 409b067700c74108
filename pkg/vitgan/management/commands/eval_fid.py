from django.core.management.base import CommandError

from vitgan import services
from vitgan.management.base import VitganCommand


class Command(VitganCommand):
    help = 'Fréchet Inception Distance between real and generated images'

    def add_arguments(self, parser):
        parser.add_argument('--real', required=True, help='Directory of real images')
        parser.add_argument('--gen', help='Directory of generated images')
        parser.add_argument('--ckpt', help='Checkpoint to colourise --gray with instead of --gen')
        parser.add_argument('--gray', help='Directory of grayscale inputs for --ckpt')
        parser.add_argument('--backend', choices=['stub', 'pretrained'], help='Feature extractor (default from settings)')
        parser.add_argument('--weights', default='', help='Extractor weights for the pretrained backend')
        parser.add_argument('--image-size', type=int, help='Decode size (default: the checkpoint size or 256)')
        parser.add_argument('--report', help='JSON report path (default: fid_report.json in the --gen or --gray directory)')

    def run(self, *args, **options):
        if not options['gen'] and not (options['ckpt'] and options['gray']):
            raise CommandError('Give --gen, or --ckpt together with --gray')

        report = services.run_fid(
            options['real'],
            generated_dir=options['gen'],
            checkpoint=options['ckpt'],
            gray_dir=options['gray'],
            backend=options['backend'],
            weights=options['weights'],
            image_size=options['image_size'],
            report_path=options['report'],
        )

        self.stdout.write(f'Backend: {report.backend}')
        self.stdout.write(f'Images: {report.n_real} real, {report.n_generated} generated')
        if report.skipped:
            self.stdout.write(self.style.WARNING(f'Skipped {report.skipped} undecodable images'))
        report_path = services.fid_report_path(options['gen'], options['gray'], options['report'])
        self.stdout.write(f'Report: {report_path}')
        self.stdout.write(self.style.SUCCESS(f'FID: {report.value:.6f}'))
