# flake8: noqa
# Django settings for phishguard project.
import os
import os.path
import sys
from ccnmtlsettings.shared import common

project = 'phishguard'
base = os.path.dirname(__file__)
locals().update(common(project=project, base=base))

DEBUG = True
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'phishguard-development-key')
ALLOWED_HOSTS = ['localhost', '127.0.0.1', '.localhost']

ROOT_URLCONF = 'phishguard.urls'
WSGI_APPLICATION = 'phishguard.wsgi.application'

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.path.join(base, '..', 'phishguard.db'),
    }
}

if 'test' in sys.argv:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': ':memory:',
        }
    }

USE_TZ = True
USE_I18N = True
TIME_ZONE = 'UTC'
DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'

# replaces the shared app, middleware and auth stacks wholesale
INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'phishguard.main.apps.MainConfig',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

AUTHENTICATION_BACKENDS = ['django.contrib.auth.backends.ModelBackend']
SESSION_ENGINE = 'django.contrib.sessions.backends.db'
CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
    }
}
STATICFILES_FINDERS = [
    'django.contrib.staticfiles.finders.FileSystemFinder',
    'django.contrib.staticfiles.finders.AppDirectoriesFinder',
]
STATICFILES_DIRS = []

STATIC_URL = '/static/'
STATIC_ROOT = os.path.join(base, '..', 'static')

STATSD_HOST = os.environ.get('STATSD_HOST')
STATSD_PORT = 8125
STATSD_PREFIX = project

PHISHGUARD_EMBEDDING = {
    'PROVIDER': os.environ.get('EMBED_PROVIDER', 'hash'),
    'DIM': 384,
    'SEED': 0,
    'MAX_INPUT_CHARS': 8000,
    'BASE_URL': os.environ.get('EMBED_BASE_URL', ''),
    'MODEL': os.environ.get('EMBED_MODEL', ''),
    'API_KEY': os.environ.get('EMBED_API_KEY', ''),
    'MAX_IN_FLIGHT': 4,
}

PHISHGUARD_THREAT_INTEL = {
    'BASE_URL': os.environ.get('VT_BASE_URL',
                               'https://www.virustotal.com/api/v3'),
    'API_KEY': os.environ.get('VT_API_KEY', ''),
    'FIXTURES': os.environ.get('VT_FIXTURES'),
    'CACHE_TTL': 24 * 60 * 60,
    'CACHE_PATH': None,
    'REQUESTS_PER_MINUTE': 4,
}

PHISHGUARD_LLM = {
    'BASE_URL': os.environ.get('LLM_BASE_URL', ''),
    'API_KEY': os.environ.get('LLM_API_KEY', ''),
    'TEMPERATURE': 0.2,
    'MAX_OUTPUT_TOKENS': 1024,
    'MAX_IN_FLIGHT': 2,
    'MAX_RETRIES': 3,
    'TIMEOUT': 60.0,
}

PHISHGUARD_PIPELINE = {
    'K': 5,
    'BUDGET_CHARS': 24000,
    'EXCERPT_CHARS': 500,
    'FAIL_CLOSED': True,
    'REASK': True,
}

PHISHGUARD_SERVICE = {
    'LISTEN': '127.0.0.1:8000',
    'INDEX_PATH': None,
    'CORPUS_PATH': None,
    'MODEL_KEY': 'llama4-scout',
    'RAG': True,
    'THREAT_INTEL': True,
    'BACKEND': 'remote',
    'BUDGET_CHARS': None,
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'phishguard': {
            'handlers': ['console'],
            'level': os.environ.get('PHISHGUARD_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}

if 'test' in sys.argv:
    LOGGING['loggers']['phishguard']['level'] = 'CRITICAL'
