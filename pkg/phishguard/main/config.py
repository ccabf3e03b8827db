"""Service configuration resolved from Django settings plus CLI overrides."""
from django.conf import settings

from phishguard.main.llm import REMOTE


class ServiceConfig(object):
    def __init__(self, listen='127.0.0.1:8000', index_path=None,
                 corpus_path=None, model_key='llama4-scout', rag=True,
                 threat=True, k=5, backend=REMOTE, budget=None,
                 threat_fixtures=None):
        self.listen = listen
        self.index_path = index_path
        self.corpus_path = corpus_path
        self.model_key = model_key
        self.rag = rag
        self.threat = threat
        self.k = k
        self.backend = backend
        self.budget = budget
        self.threat_fixtures = threat_fixtures

    @classmethod
    def from_settings(cls, **overrides):
        service = dict(getattr(settings, 'PHISHGUARD_SERVICE', {}))
        kwargs = dict(
            listen=service.get('LISTEN', '127.0.0.1:8000'),
            index_path=service.get('INDEX_PATH'),
            corpus_path=service.get('CORPUS_PATH'),
            model_key=service.get('MODEL_KEY', 'llama4-scout'),
            rag=service.get('RAG', True),
            threat=service.get('THREAT_INTEL', True),
            k=settings.PHISHGUARD_PIPELINE.get('K', 5),
            backend=service.get('BACKEND', REMOTE),
            budget=service.get('BUDGET_CHARS'),
            threat_fixtures=settings.PHISHGUARD_THREAT_INTEL.get('FIXTURES'),
        )
        kwargs.update((k, v) for k, v in overrides.items() if v is not None)
        return cls(**kwargs)

    @property
    def host_port(self):
        host, _, port = self.listen.rpartition(':')
        return host or '127.0.0.1', int(port)

    def as_dict(self):
        return dict(self.__dict__)
