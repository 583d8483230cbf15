"""
Django settings for the kernelguard project.

There is no database and no HTTP surface: the apps are used as libraries
and through management commands (``manage.py run|verify|sweep|report``).
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-kernelguard-local-only')

DEBUG = os.environ.get('DJANGO_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'core',
    'detection',
    'harness',
]

DATABASES = {}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': os.environ.get('KERNELGUARD_LOG_LEVEL', 'INFO'),
    },
}


# Simulación y detección

KERNELGUARD = {
    'ALPHA': 0.05,
    'LAMBDA': 1e6,
    'DWELL_MIN': 25,
    'KAPPA': 2,
    'WINDOW': 50,
    'RANK_TOL': 1e-8,
    'RICCATI_TOL': 1e-11,
    'RICCATI_MAX_ITERS': 100_000,
    'SOCKET_TIMEOUT': 10.0,
    'PERTURBATION_SCALE': 1.0,
    'SATURATION_HORIZON': 200,
}

# Reemplaza la semilla de los escenarios cuando está definida
KERNELGUARD_SEED = int(os.environ['KERNELGUARD_SEED']) if os.environ.get('KERNELGUARD_SEED') else None
