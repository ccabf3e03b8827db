import json

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from phishguard.main.emails import read_corpus
from phishguard.main.embedding import get_embedding_provider
from phishguard.main.evaluation import MODES, PROTOCOLS, SPLIT, \
    SplitSpec, emit_report, run_matrix
from phishguard.main.exceptions import PhishGuardError
from phishguard.main.llm import SCRIPTED, backend_from_selection, lookup
from phishguard.main.threatintel import client_from_config


class Command(BaseCommand):
    help = 'Run the with/without-context matrix and write the reports'

    def add_arguments(self, parser):
        parser.add_argument('--corpus', required=True)
        parser.add_argument('--models', default='llama4-scout',
                            help='comma-separated model keys')
        parser.add_argument('--modes', default=','.join(MODES),
                            help='comma-separated subset of rag,norag')
        parser.add_argument('--backend', default='remote',
                            help='remote or scripted:PATH')
        parser.add_argument('--out', required=True, help='report directory')
        parser.add_argument('--protocol', choices=PROTOCOLS, default=SPLIT)
        parser.add_argument('--train-fraction', type=float, default=0.8)
        parser.add_argument('--seed', type=int, default=42)
        parser.add_argument('--k', type=int,
                            default=settings.PHISHGUARD_PIPELINE['K'])
        parser.add_argument('--threat-fixtures')
        parser.add_argument('--no-threat-intel', action='store_true')
        parser.add_argument('--all-labels', action='store_true',
                            help='index every training email, not only '
                                 'legitimate ones')
        parser.add_argument('--exclude-fallbacks', action='store_true')
        parser.add_argument('--parallelism', type=int, default=1)

    def handle(self, *args, **options):
        modes = [m.strip() for m in options['modes'].split(',') if m.strip()]
        for mode in modes:
            if mode not in MODES:
                raise CommandError('unknown mode {!r}'.format(mode))
        try:
            models = [lookup(k.strip())
                      for k in options['models'].split(',') if k.strip()]
            corpus = read_corpus(options['corpus'])
        except PhishGuardError as e:
            raise CommandError(e.message)
        except (IOError, OSError, ValueError) as e:
            raise CommandError('cannot read corpus: {}'.format(e),
                               returncode=2)

        fixtures = {'corpus': options['corpus']}
        backend = options['backend']
        if backend.startswith(SCRIPTED + ':'):
            fixtures['rules'] = backend[len(SCRIPTED) + 1:]
        threat_client = None
        if not options['no_threat_intel']:
            if options['threat_fixtures']:
                fixtures['threat'] = options['threat_fixtures']
            threat_client = client_from_config(
                settings.PHISHGUARD_THREAT_INTEL,
                fixtures_path=options['threat_fixtures'])

        llm_config = settings.PHISHGUARD_LLM
        pipeline_config = settings.PHISHGUARD_PIPELINE
        try:
            report = run_matrix(
                corpus, models, modes,
                spec=SplitSpec(options['train_fraction'], options['seed']),
                backend_for=lambda spec: backend_from_selection(
                    backend, spec, llm_config),
                provider=get_embedding_provider(),
                threat_client=threat_client,
                k=options['k'],
                protocol=options['protocol'],
                all_labels=options['all_labels'],
                exclude_fallbacks=options['exclude_fallbacks'],
                parallelism=max(1, options['parallelism']),
                cell_parallelism=len(models) * len(modes),
                engine_options=dict(
                    budget=pipeline_config['BUDGET_CHARS'],
                    excerpt_chars=pipeline_config['EXCERPT_CHARS'],
                    fail_closed=pipeline_config['FAIL_CLOSED'],
                    reask=pipeline_config['REASK'],
                    temperature=llm_config['TEMPERATURE'],
                    max_output_tokens=llm_config['MAX_OUTPUT_TOKENS']),
                fixtures=fixtures)
        except PhishGuardError as e:
            raise CommandError(json.dumps(e.as_dict()))

        for path in emit_report(report, options['out']):
            self.stdout.write(path)
