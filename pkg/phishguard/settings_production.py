# flake8: noqa
import os

from phishguard.settings_shared import *
from ccnmtlsettings.production import common

locals().update(
    common(
        project=project,
        base=base,
        INSTALLED_APPS=INSTALLED_APPS,
        STATIC_ROOT=STATIC_ROOT,
        s3static=False,
    ))

DEBUG = False
SECRET_KEY = os.environ['DJANGO_SECRET_KEY']
ALLOWED_HOSTS = os.environ.get('ALLOWED_HOSTS', 'localhost').split(',')

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.postgresql',
        'NAME': os.environ.get('DB_NAME', project),
        'HOST': os.environ.get('DB_HOST', ''),
        'PORT': os.environ.get('DB_PORT', '5432'),
        'USER': os.environ.get('DB_USER', ''),
        'PASSWORD': os.environ.get('DB_PASSWORD', ''),
    }
}

STATSD_HOST = os.environ.get('STATSD_HOST', '127.0.0.1')

PHISHGUARD_SERVICE.update({
    'INDEX_PATH': os.environ.get('PHISHGUARD_INDEX'),
    'CORPUS_PATH': os.environ.get('PHISHGUARD_CORPUS'),
    'MODEL_KEY': os.environ.get('PHISHGUARD_MODEL', 'llama4-scout'),
})

SENTRY_DSN = os.environ.get('SENTRY_DSN')

if SENTRY_DSN:
    if 'raven.contrib.django.raven_compat' not in INSTALLED_APPS:
        INSTALLED_APPS += ['raven.contrib.django.raven_compat']
    RAVEN_CONFIG = {'dsn': SENTRY_DSN}
    LOGGING['handlers']['sentry'] = {
        'level': 'ERROR',
        'class': 'raven.contrib.django.raven_compat.handlers.SentryHandler',
    }
    LOGGING['loggers']['phishguard']['handlers'].append('sentry')

try:
    from phishguard.local_settings import *
except ImportError:
    pass
