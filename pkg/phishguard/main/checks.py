"""Startup validation of the classification service configuration.

Registered as deployment checks, so ``./manage.py check --deploy`` and
``./manage.py serve`` run them while the test runner does not.
"""
import os

from django.conf import settings
from django.core.checks import Error, Warning, register

from phishguard.main.config import ServiceConfig
from phishguard.main.exceptions import UnknownModel
from phishguard.main.llm import REMOTE, SCRIPTED, lookup


def _readable(path):
    return bool(path) and os.path.isfile(path) and os.access(path, os.R_OK)


def check_service_config(config):
    errors = []
    try:
        lookup(config.model_key)
    except UnknownModel:
        errors.append(Error(
            'unknown model key {!r}'.format(config.model_key),
            hint='use one of llama4-scout, deepseek-r1, mistral-saba, '
                 'gemma2-9b',
            id='phishguard.E001'))
    if config.rag:
        if not _readable(config.index_path):
            errors.append(Error(
                'index file {!r} does not exist'.format(config.index_path),
                hint='build one with ./manage.py index or disable rag',
                id='phishguard.E002'))
        if not _readable(config.corpus_path):
            errors.append(Error(
                'corpus file {!r} does not exist'.format(config.corpus_path),
                hint='the index holds vectors only; context text comes '
                     'from the ingested corpus',
                id='phishguard.E003'))
    if config.backend.startswith(SCRIPTED + ':'):
        path = config.backend[len(SCRIPTED) + 1:]
        if not _readable(path):
            errors.append(Error(
                'scripted rules file {!r} is not readable'.format(path),
                id='phishguard.E004'))
    elif config.backend == REMOTE:
        if not settings.PHISHGUARD_LLM.get('BASE_URL'):
            errors.append(Error('LLM_BASE_URL is not set',
                                id='phishguard.E005'))
    else:
        errors.append(Error(
            'unknown backend {!r}'.format(config.backend),
            hint='use remote or scripted:PATH', id='phishguard.E006'))
    if config.threat:
        if config.threat_fixtures:
            if not _readable(config.threat_fixtures):
                errors.append(Error(
                    'threat fixtures {!r} are not readable'.format(
                        config.threat_fixtures),
                    id='phishguard.E007'))
        elif not settings.PHISHGUARD_THREAT_INTEL.get('API_KEY'):
            errors.append(Warning(
                'VT_API_KEY is not set; reputation lookups will fail',
                id='phishguard.W001'))
    return errors


@register('phishguard', deploy=True)
def service_config_check(app_configs, **kwargs):
    return check_service_config(ServiceConfig.from_settings())
