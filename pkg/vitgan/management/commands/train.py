from vitgan import services
from vitgan.management.base import VitganCommand


class Command(VitganCommand):
    help = 'Train a colourisation GAN from a TOML run config'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='TOML run config (or a config.json echo)')
        parser.add_argument(
            '--set',
            dest='overrides',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Override a config value, e.g. --set train.epochs=5 (repeatable)',
        )
        parser.add_argument('--variant', choices=['vit-gan', 'vit-i-gan'], help='Shortcut for --set variant=...')
        parser.add_argument('--resume', metavar='CKPT', help='Continue from a training checkpoint')

    def run(self, *args, **options):
        overrides = list(options['overrides'])
        if options['variant']:
            overrides.append(f"variant={options['variant']}")

        if options['config']:
            cfg = services.load_train_config(options['config'], overrides)
        elif options['resume']:
            cfg = services.load_train_config(tree=services.checkpoint_config_tree(options['resume']), overrides=overrides)
        else:
            cfg = services.load_train_config(overrides=overrides)

        self.stdout.write(f'Training {cfg.variant} into {cfg.output_dir}...')
        result = services.run_training(cfg, resume=options['resume'])

        self.stdout.write(f'Steps: {result.steps} ({result.epochs} epochs)')
        if result.skipped:
            self.stdout.write(self.style.WARNING(f'Skipped {result.skipped} undecodable images'))
        self.stdout.write(f'Metrics: {result.metrics_path}')
        self.stdout.write(self.style.SUCCESS(f'Final checkpoint: {result.final_checkpoint}'))
