import json
import os

from django.core.management.base import BaseCommand, CommandError

from phishguard.main.emails import LABELS, LEGITIMATE, read_corpus
from phishguard.main.embedding import get_embedding_provider
from phishguard.main.exceptions import PhishGuardError
from phishguard.main.vectorindex import build_index, index_save, \
    write_manifest


class Command(BaseCommand):
    help = 'Embed a corpus into a flat index file'

    def add_arguments(self, parser):
        parser.add_argument('--corpus', required=True)
        parser.add_argument('--out', required=True, help='index file to write')
        parser.add_argument('--only-label', choices=LABELS, default=LEGITIMATE)
        parser.add_argument('--all-labels', action='store_true',
                            help='admit every email, whatever its label')
        parser.add_argument('--manifest',
                            help='default: <out>.manifest.json')

    def handle(self, *args, **options):
        try:
            emails = read_corpus(options['corpus'])
        except (IOError, OSError, ValueError) as e:
            raise CommandError('cannot read {}: {}'.format(
                options['corpus'], e), returncode=2)
        labels = None if options['all_labels'] else (options['only_label'],)
        try:
            idx = build_index(get_embedding_provider(), emails, labels=labels)
        except PhishGuardError as e:
            raise CommandError(json.dumps(e.as_dict()), returncode=5)

        out = options['out']
        parent = os.path.dirname(os.path.abspath(out))
        if not os.path.isdir(parent):
            os.makedirs(parent)
        index_save(idx, out)
        write_manifest(idx, options['manifest'] or out + '.manifest.json')
        self.stdout.write(json.dumps(
            {'index': out, 'count': len(idx), 'dim': idx.dim},
            sort_keys=True))
