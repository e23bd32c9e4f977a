"""
Django settings for the stnetlab project.

The project has no web surface: Django provides configuration, logging,
the management-command CLI and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

import os
from pathlib import Path

import structlog

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Nothing is served or signed; the key only satisfies Django's startup checks.
SECRET_KEY = os.getenv("STNET_SECRET_KEY", "stnetlab-offline-no-web-surface")

DEBUG = os.getenv("STNET_DEBUG", "0") == "1"

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'streams',
]

# Runs and reports are written to files; there is no experiment database.
DATABASES = {}

USE_I18N = False

USE_TZ = True

TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Dataset and run locations

STNET_DATA_DIR = Path(os.getenv("STNET_DATA_DIR", str(BASE_DIR / "data")))

STNET_RUNS_DIR = Path(os.getenv("STNET_RUNS_DIR", str(BASE_DIR / "runs")))

# Defaults for every experiment knob; config files and flags override them.
STNET_DEFAULTS = {
    'epochs': 15,
    'batch_size': 64,
    'lr': 0.01,
    'momentum': 0.9,
    'optimizer': 'sgd',
    'precision': 'float32',
    'seed': 0,
    'slices': 3,
    'slice_mode': 'pixel-luminance',
    'stream_inputs': 'slices',
    'bn_epsilon': 1e-3,
    'bn_momentum': 0.99,
    'flops_convention': 'spatial-v1',
    'suite_seed': 0,
    'split_seed': 0,
    'split_fraction': 0.5,
}


# Logging

STNET_LOG_LEVEL = os.getenv("STNET_LOG_LEVEL", "INFO").upper()

STNET_LOG_FORMAT = os.getenv("STNET_LOG_FORMAT", "console")

_renderer = (
    structlog.processors.JSONRenderer()
    if STNET_LOG_FORMAT == "json"
    else structlog.dev.ConsoleRenderer(colors=False)
)

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'structured': {
            '()': structlog.stdlib.ProcessorFormatter,
            'processor': _renderer,
            'foreign_pre_chain': [
                structlog.stdlib.add_log_level,
                structlog.processors.TimeStamper(fmt="iso"),
            ],
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'structured',
        },
    },
    'loggers': {
        'streams': {
            'handlers': ['console'],
            'level': STNET_LOG_LEVEL,
            'propagate': False,
        },
    },
}

structlog.configure(
    processors=[
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
    ],
    logger_factory=structlog.stdlib.LoggerFactory(),
    wrapper_class=structlog.stdlib.BoundLogger,
    cache_logger_on_first_use=True,
)
