from vitgan.feature_extractor import (
    INCEPTION_BACKEND,
    STUB_BACKEND,
    export_extractor,
    inception_from_torchvision,
    make_stub_extractor,
)
from vitgan.management.base import VitganCommand


class Command(VitganCommand):
    help = 'Write feature-extractor weights to a parameter container'

    def add_arguments(self, parser):
        parser.add_argument('--backend', choices=[STUB_BACKEND, INCEPTION_BACKEND], default=STUB_BACKEND)
        parser.add_argument('--seed', type=int, default=0, help='Seed of the stub backend')
        parser.add_argument('--out', required=True, help='Output container path')

    def run(self, *args, **options):
        if options['backend'] == STUB_BACKEND:
            extractor = make_stub_extractor(options['seed'])
        else:
            self.stdout.write('Converting torchvision Inception-v3 weights...')
            extractor = inception_from_torchvision()

        digest = export_extractor(extractor, options['out'])
        self.stdout.write(f'sha256: {digest}')
        self.stdout.write(self.style.SUCCESS(f"Wrote {options['backend']} extractor to {options['out']}"))
