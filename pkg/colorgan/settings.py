"""
Django settings for the colorgan project.

The project has no web surface: Django provides configuration, the run
registry database, management commands and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os

import dj_database_url

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Only used for signing, which nothing in this project does.
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-colorgan-local-only')

DEBUG = os.environ.get('DJANGO_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'vitgan',
]


# Database (run registry)
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': dj_database_url.config(
        default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}",
    ),
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging
# Management commands raise or lower the 'vitgan' level from --verbosity.

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'run': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'run',
        },
    },
    'loggers': {
        'vitgan': {
            'handlers': ['console'],
            'level': os.environ.get('VITGAN_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Colourisation defaults

VITGAN = {
    # Where `train` puts run directories when a config gives a relative output_dir.
    'RUNS_ROOT': Path(os.environ.get('VITGAN_RUNS_ROOT', BASE_DIR / 'runs')),
    # Backend eval_fid uses when --backend is not given.
    'EXTRACTOR_BACKEND': os.environ.get('VITGAN_EXTRACTOR_BACKEND', 'stub'),
    'EXTRACTOR_WEIGHTS': os.environ.get('VITGAN_EXTRACTOR_WEIGHTS', ''),
    'STUB_EXTRACTOR_SEED': 0,
    # Bitwise-reproducible CPU kernels for resume/replay.
    'DETERMINISTIC': True,
}
