import json
import os

from django.core.management.base import BaseCommand, CommandError

from phishguard.main.emails import LABELS, CleanEmail, anonymize_sender, \
    load_eml_directory, preprocess_corpus, preprocess_records, read_jsonl, \
    write_corpus


class Command(BaseCommand):
    help = 'Clean a directory of .eml files or a raw JSONL file into a corpus'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True,
                            help='directory of .eml files or a JSONL file')
        parser.add_argument('--out', required=True,
                            help='corpus JSONL to write')
        parser.add_argument('--report',
                            help='ingestion report path '
                                 '(default: <out>.report.json)')
        parser.add_argument('--label', choices=LABELS,
                            help='label for emails that carry none')
        parser.add_argument('--anonymize', action='store_true',
                            help='replace sender local parts with "user"')
        parser.add_argument('--workers', type=int, default=1)

    def load(self, path, label):
        if os.path.isdir(path):
            raws = load_eml_directory(path, label=label)
            if not raws:
                raise CommandError('no .eml files in {}'.format(path),
                                   returncode=2)
            return preprocess_corpus(raws, workers=self.workers)
        records = read_jsonl(path)
        if not records:
            raise CommandError('{} holds no records'.format(path),
                               returncode=2)
        if label:
            for rec in records:
                if isinstance(rec, dict):
                    rec.setdefault('label', label)
        return preprocess_records(records)

    def handle(self, *args, **options):
        self.workers = max(1, options['workers'])
        path = options['input']
        try:
            emails, report = self.load(path, options['label'])
        except (IOError, OSError, ValueError) as e:
            raise CommandError('cannot read {}: {}'.format(path, e),
                               returncode=2)

        if options['anonymize']:
            emails = [CleanEmail(e.id, e.subject, anonymize_sender(e.sender),
                                 e.body, e.label) for e in emails]

        report_path = options['report'] or options['out'] + '.report.json'
        with open(report_path, 'w') as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        if not emails:
            raise CommandError('no email survived ingestion', returncode=2)
        write_corpus(options['out'], emails)
        self.stdout.write(json.dumps(report.as_dict(), sort_keys=True))
