import os
import shutil
import tempfile

from ccnmtlsettings.shared import common
from django.conf import settings
from django.test import TestCase, override_settings

from phishguard.main.checks import check_service_config
from phishguard.main.config import ServiceConfig
from phishguard.main.tests.synthetic import SCRIPTED_RULES, \
    THREAT_FIXTURES


class CheckServiceConfigTest(TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.index = os.path.join(self.tmpdir, 'user.pgix')
        self.corpus = os.path.join(self.tmpdir, 'corpus.jsonl')
        for path in (self.index, self.corpus):
            with open(path, 'w') as fh:
                fh.write('x')

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def ids(self, **kwargs):
        params = dict(index_path=self.index, corpus_path=self.corpus,
                      backend='scripted:' + SCRIPTED_RULES,
                      threat_fixtures=THREAT_FIXTURES)
        params.update(kwargs)
        return [c.id for c in check_service_config(ServiceConfig(**params))]

    def test_valid(self):
        self.assertEqual(self.ids(), [])

    def test_unknown_model(self):
        self.assertEqual(self.ids(model_key='gpt-2'), ['phishguard.E001'])

    def test_missing_files(self):
        self.assertEqual(
            self.ids(index_path='/nonexistent/user.pgix',
                     corpus_path=None),
            ['phishguard.E002', 'phishguard.E003'])
        self.assertEqual(self.ids(index_path=None, corpus_path=None,
                                  rag=False), [])

    def test_backends(self):
        self.assertEqual(self.ids(backend='scripted:/nonexistent.json'),
                         ['phishguard.E004'])
        self.assertEqual(self.ids(backend='carrier-pigeon'),
                         ['phishguard.E006'])

    @override_settings(PHISHGUARD_LLM={'BASE_URL': ''})
    def test_remote_needs_base_url(self):
        self.assertEqual(self.ids(backend='remote'), ['phishguard.E005'])

    @override_settings(PHISHGUARD_LLM={'BASE_URL': 'http://llm.local'})
    def test_remote(self):
        self.assertEqual(self.ids(backend='remote'), [])

    @override_settings(PHISHGUARD_THREAT_INTEL={'API_KEY': ''})
    def test_threat(self):
        self.assertEqual(self.ids(threat_fixtures='/nonexistent.json'),
                         ['phishguard.E007'])
        self.assertEqual(self.ids(threat_fixtures=None),
                         ['phishguard.W001'])
        self.assertEqual(self.ids(threat_fixtures=None, threat=False), [])


class SettingsTest(TestCase):
    def test_built_on_shared_defaults(self):
        shared = common(project='phishguard', base='phishguard')
        for name in shared:
            if name.isupper():
                self.assertTrue(hasattr(settings, name), name)

    def test_project_overrides(self):
        self.assertEqual(settings.STATSD_PREFIX, 'phishguard')
        self.assertEqual(settings.DATABASES['default']['ENGINE'],
                         'django.db.backends.sqlite3')
        self.assertEqual(settings.AUTHENTICATION_BACKENDS,
                         ['django.contrib.auth.backends.ModelBackend'])
        self.assertIn('phishguard.main.apps.MainConfig',
                      settings.INSTALLED_APPS)
        self.assertIn('K', settings.PHISHGUARD_PIPELINE)
