"""
Shared behaviour of the vitgan management commands.
"""

import logging

from django.core.management.base import BaseCommand, CommandError

from ..exceptions import VitGanError

VERBOSITY_LEVELS = {
    0: logging.ERROR,
    1: logging.WARNING,
    2: logging.INFO,
    3: logging.DEBUG,
}


class VitganCommand(BaseCommand):
    """Maps ``--verbosity`` onto the ``vitgan`` logger and library errors onto
    ``CommandError``. Subclasses implement ``run`` instead of ``handle``."""

    def handle(self, *args, **options):
        level = VERBOSITY_LEVELS.get(options.get('verbosity', 1), logging.DEBUG)
        logging.getLogger('vitgan').setLevel(level)
        try:
            return self.run(*args, **options)
        except VitGanError as exc:
            raise CommandError(str(exc)) from exc

    def run(self, *args, **options):
        raise NotImplementedError
