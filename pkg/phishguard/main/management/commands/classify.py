import json
import sys

from django.core.checks import ERROR
from django.core.management.base import BaseCommand, CommandError

from phishguard.main.checks import check_service_config
from phishguard.main.config import ServiceConfig
from phishguard.main.emails import RawEmail, clean_email_from_fields, \
    preprocess_corpus
from phishguard.main.exceptions import InvalidEmail, PhishGuardError
from phishguard.main.models import ClassificationLog
from phishguard.main.pipeline import build_engine

EXIT_LEGITIMATE = 0
EXIT_PHISHING = 3
EXIT_FALLBACK = 4
EXIT_ERROR = 5


def exit_code(result):
    if result.fallback_used:
        return EXIT_FALLBACK
    if result.verdict.is_phishing:
        return EXIT_PHISHING
    return EXIT_LEGITIMATE


class Command(BaseCommand):
    help = ('Classify one email; exit 0 legitimate, 3 phishing, '
            '4 fail-closed fallback, 5 error')

    def add_arguments(self, parser):
        parser.add_argument('email',
                            help='.eml file, or a JSON file with subject, '
                                 'sender and body')
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
        parser.add_argument('--log', action='store_true',
                            help='record the result in the audit log')

    def fail(self, error):
        self.stdout.write(json.dumps(error))
        raise CommandError(error.get('message', 'classification failed'),
                           returncode=EXIT_ERROR)

    def load_email(self, path):
        if path.lower().endswith('.eml'):
            emails, _ = preprocess_corpus([RawEmail.from_file(path)])
            if not emails:
                raise InvalidEmail('{} has no usable sender or body'.format(
                    path), field='email')
            return emails[0]
        with open(path) as fh:
            d = json.load(fh)
        return clean_email_from_fields(
            d.get('id', path), d.get('subject', ''), d.get('sender', ''),
            d.get('body', ''))

    def handle(self, *args, **options):
        config = ServiceConfig.from_settings(
            index_path=options['index'],
            corpus_path=options['corpus'],
            model_key=options['model'],
            k=options['k'],
            backend=options['backend'],
            budget=options['budget'],
            threat_fixtures=options['threat_fixtures'],
            rag=False if options['no_rag'] else None,
            threat=False if options['no_threat_intel'] else None)
        problems = [c for c in check_service_config(config)
                    if c.level >= ERROR]
        if problems:
            self.fail({'error': 'invalid_config',
                       'message': '; '.join(c.msg for c in problems)})

        try:
            e = self.load_email(options['email'])
            engine = build_engine(config)
            result = engine.classify(e)
        except PhishGuardError as err:
            self.fail(err.as_dict())
        except (IOError, OSError, ValueError) as err:
            self.fail({'error': 'unreadable_input', 'message': str(err)})

        if options['log']:
            ClassificationLog.objects.record(result)
        self.stdout.write(result.to_json())
        code = exit_code(result)
        if code != EXIT_LEGITIMATE:
            sys.exit(code)
