import logging

from django.core.checks import ERROR
from django.core.management.base import BaseCommand, CommandError
from gunicorn.app.base import BaseApplication

from phishguard.main.checks import check_service_config
from phishguard.main.config import ServiceConfig
from phishguard.main.exceptions import PhishGuardError
from phishguard.main.pipeline import build_engine, set_service_engine
from phishguard.wsgi import application


logger = logging.getLogger(__name__)


class ServiceApplication(BaseApplication):
    """Runs the WSGI app in gunicorn; SIGTERM drains in-flight requests."""

    def __init__(self, app, options):
        self.application = app
        self.options = options
        super(ServiceApplication, self).__init__()

    def load_config(self):
        for key, value in self.options.items():
            self.cfg.set(key, value)

    def load(self):
        return self.application


class Command(BaseCommand):
    help = 'Serve POST /classify and GET /healthz'
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--listen', help='HOST:PORT')
        parser.add_argument('--index')
        parser.add_argument('--corpus',
                            help='corpus JSONL the index was built from')
        parser.add_argument('--model')
        parser.add_argument('--k', type=int)
        parser.add_argument('--no-rag', action='store_true')
        parser.add_argument('--no-threat-intel', action='store_true')
        parser.add_argument('--backend', help='remote or scripted:PATH')
        parser.add_argument('--threat-fixtures')
        parser.add_argument('--budget', type=int,
                            help='prompt budget in characters')
        parser.add_argument('--threads', type=int, default=8)
        parser.add_argument('--graceful-timeout', type=int, default=30)

    def service_config(self, options):
        return ServiceConfig.from_settings(
            listen=options['listen'],
            index_path=options['index'],
            corpus_path=options['corpus'],
            model_key=options['model'],
            k=options['k'],
            backend=options['backend'],
            budget=options['budget'],
            threat_fixtures=options['threat_fixtures'],
            rag=False if options['no_rag'] else None,
            threat=False if options['no_threat_intel'] else None)

    def handle(self, *args, **options):
        config = self.service_config(options)
        messages = check_service_config(config)
        for m in messages:
            self.stderr.write(str(m))
        if any(m.level >= ERROR for m in messages):
            raise CommandError('invalid service configuration')
        try:
            host, port = config.host_port
        except ValueError:
            raise CommandError('--listen must be HOST:PORT, got {!r}'.format(
                config.listen))

        # one engine per user profile, loaded before the first request
        try:
            engine = build_engine(config)
        except (PhishGuardError, ValueError) as e:
            raise CommandError('cannot load service: {}'.format(e))
        set_service_engine(engine)
        logger.info('serving model=%s index_size=%d rag=%s threat=%s '
                    'listen=%s:%d', config.model_key, len(engine.index),
                    config.rag, config.threat, host, port)
        ServiceApplication(application, {
            'bind': '{}:{}'.format(host, port),
            'workers': 1,
            'threads': options['threads'],
            'graceful_timeout': options['graceful_timeout'],
            'accesslog': '-',
        }).run()
