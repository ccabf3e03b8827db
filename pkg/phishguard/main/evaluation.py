"""Stratified splits, the with/without-context run matrix and its reports."""
import csv
import hashlib
import io
import json
import logging
import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

from sklearn.model_selection import train_test_split

from phishguard.main.emails import LABELS, LEGITIMATE, PHISHING
from phishguard.main.exceptions import DegenerateCorpus, LeakageDetected, \
    PhishGuardError
from phishguard.main.pipeline import ClassifyOptions, Engine, classify_batch
from phishguard.main.vectorindex import build_index


logger = logging.getLogger(__name__)

RAG_OFF = 'norag'
RAG_ON = 'rag'
MODES = (RAG_OFF, RAG_ON)
MODE_HEADINGS = {RAG_OFF: 'w/o', RAG_ON: 'w/'}

SPLIT = 'split'
FULL = 'full'
PROTOCOLS = (SPLIT, FULL)

METRICS = ('accuracy', 'recall', 'precision', 'f1', 'fpr')
METRIC_HEADINGS = OrderedDict([
    ('accuracy', 'Accuracy'),
    ('recall', 'Recall'),
    ('precision', 'Precision'),
    ('f1', 'F1-score'),
    ('fpr', 'FPR'),
])
MISSING = '—'

# published (accuracy, recall, precision, f1, fpr) per model and mode,
# evaluated on 250 phishing and 250 legitimate emails
PUBLISHED_TABLE = OrderedDict([
    ('llama4-scout', {
        RAG_OFF: (0.9300, 0.9800, 0.8909, 0.9333, 0.1200),
        RAG_ON: (0.9700, 0.9800, 0.9608, 0.9703, 0.0400)}),
    ('deepseek-r1', {
        RAG_OFF: (0.8900, 1.0000, 0.8197, 0.9009, 0.2200),
        RAG_ON: (0.9600, 0.9800, 0.9423, 0.9608, 0.0600)}),
    ('mistral-saba', {
        RAG_OFF: (0.8220, 1.0000, 0.7375, 0.8489, 0.3560),
        RAG_ON: (0.9500, 1.0000, 0.9091, 0.9524, 0.1000)}),
    ('gemma2-9b', {
        RAG_OFF: (0.8000, 1.0000, 0.7143, 0.8333, 0.4000),
        RAG_ON: (0.8400, 1.0000, 0.7576, 0.8621, 0.3200)}),
])


class SplitSpec(object):
    def __init__(self, train_fraction=0.8, seed=42, stratify_on='label'):
        if not 0.0 < train_fraction < 1.0:
            raise ValueError('train_fraction must be in (0, 1)')
        self.train_fraction = train_fraction
        self.seed = seed
        self.stratify_on = stratify_on

    def as_dict(self):
        return dict(train_fraction=self.train_fraction, seed=self.seed,
                    stratify_on=self.stratify_on)


def _classes(corpus, attr):
    """Positions per class; both classes must be present."""
    by_class = {}
    for pos, e in enumerate(corpus):
        key = getattr(e, attr)
        if key is None:
            raise DegenerateCorpus('email {} has no label'.format(e.id),
                                   email_id=e.id)
        by_class.setdefault(key, []).append(pos)
    for label in LABELS:
        if not by_class.get(label):
            raise DegenerateCorpus('no {} emails in corpus'.format(label),
                                   label=label)
    return by_class


def stratified_split(corpus, spec=None):
    """Deterministic per-class split; both portions keep input order.

    Every class needs at least two emails so that it lands on both sides.
    """
    spec = spec or SplitSpec()
    corpus = list(corpus)
    by_class = _classes(corpus, spec.stratify_on)
    for label, positions in sorted(by_class.items()):
        if len(positions) < 2:
            raise DegenerateCorpus(
                'only one {} email; it cannot be split'.format(label),
                label=label)
    n, n_classes = len(corpus), len(by_class)
    n_test = n - int(math.floor(n * spec.train_fraction + 0.5))
    n_test = min(max(n_test, n_classes), n - n_classes)
    train_positions, _ = train_test_split(
        list(range(n)),
        test_size=n_test,
        stratify=[getattr(e, spec.stratify_on) for e in corpus],
        random_state=spec.seed)
    train_positions = set(int(pos) for pos in train_positions)
    train = [e for pos, e in enumerate(corpus) if pos in train_positions]
    test = [e for pos, e in enumerate(corpus) if pos not in train_positions]
    return train, test


class ConfusionMatrix(object):
    """Positive class is phishing."""

    def __init__(self, tp=0, fn=0, fp=0, tn=0):
        self.tp = tp
        self.fn = fn
        self.fp = fp
        self.tn = tn

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and \
            self.as_dict() == other.as_dict()

    def __ne__(self, other):
        return not self.__eq__(other)

    def __repr__(self):
        return '<ConfusionMatrix tp={} fn={} fp={} tn={}>'.format(
            self.tp, self.fn, self.fp, self.tn)

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn

    def record(self, actual, predicted):
        if actual == PHISHING:
            if predicted == PHISHING:
                self.tp += 1
            else:
                self.fn += 1
        elif predicted == PHISHING:
            self.fp += 1
        else:
            self.tn += 1

    def as_dict(self):
        return OrderedDict([('tp', self.tp), ('fn', self.fn),
                            ('fp', self.fp), ('tn', self.tn)])


def _ratio(num, den):
    if den == 0:
        return None
    return num / float(den)


def compute_metrics(m):
    """Metric set of ``m``; a metric with a zero denominator is None."""
    precision = _ratio(m.tp, m.tp + m.fp)
    recall = _ratio(m.tp, m.tp + m.fn)
    f1 = None
    if precision is not None and recall is not None and \
            precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return OrderedDict([
        ('accuracy', _ratio(m.tp + m.tn, m.total)),
        ('recall', recall),
        ('precision', precision),
        ('f1', f1),
        ('fpr', _ratio(m.fp, m.fp + m.tn)),
    ])


def backsolve_matrix(recall, fpr, positives=250, negatives=250):
    """Confusion matrix implied by published recall and FPR."""
    tp = int(round(recall * positives))
    fp = int(round(fpr * negatives))
    return ConfusionMatrix(tp=tp, fn=positives - tp, fp=fp,
                           tn=negatives - fp)


class CellResult(object):
    def __init__(self, model_key, mode, matrix=None, failed=0, fallbacks=0,
                 excluded_fallbacks=0, error=None):
        self.model_key = model_key
        self.mode = mode
        self.matrix = matrix
        self.failed = failed
        self.fallbacks = fallbacks
        self.excluded_fallbacks = excluded_fallbacks
        self.error = error

    @property
    def incomplete(self):
        return self.matrix is None or self.failed > 0

    @property
    def n(self):
        return self.matrix.total if self.matrix is not None else 0

    @property
    def metrics(self):
        if self.matrix is None:
            return None
        return compute_metrics(self.matrix)

    def as_dict(self):
        classified = self.n + self.excluded_fallbacks
        return OrderedDict([
            ('model_key', self.model_key),
            ('mode', self.mode),
            ('n', self.n),
            ('incomplete', self.incomplete),
            ('failed', self.failed),
            ('error', self.error),
            ('fallbacks', self.fallbacks),
            ('fallback_rate', _ratio(self.fallbacks, classified)),
            ('excluded_fallbacks', self.excluded_fallbacks),
            ('matrix', self.matrix.as_dict()
             if self.matrix is not None else None),
            ('metrics', self.metrics),
        ])


class EvalReport(object):
    def __init__(self, models, modes, metadata=None, manifest=None):
        self.models = list(models)
        self.modes = list(modes)
        self.metadata = metadata or OrderedDict()
        self.manifest = manifest
        self.cells = OrderedDict()

    def add(self, cell):
        self.cells[(cell.model_key, cell.mode)] = cell

    def cell(self, model_key, mode):
        return self.cells.get((model_key, mode))

    @property
    def complete(self):
        return all(not c.incomplete for c in self.cells.values()) and \
            len(self.cells) == len(self.models) * len(self.modes)

    def as_dict(self):
        return OrderedDict([
            ('metadata', self.metadata),
            ('models', self.models),
            ('modes', self.modes),
            ('cells', [c.as_dict() for c in self.cells.values()]),
        ])

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2)


def fixture_hash(path):
    with open(path, 'rb') as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _score_cell(cell, results, test_by_id, exclude_fallbacks):
    matrix = ConfusionMatrix()
    for result in results:
        if not result.ok:
            cell.failed += 1
            continue
        if result.fallback_used:
            cell.fallbacks += 1
            if exclude_fallbacks:
                cell.excluded_fallbacks += 1
                continue
        matrix.record(test_by_id[result.email_id].label,
                      result.verdict.classification_decision)
    cell.matrix = matrix
    return cell


def _assert_no_self_retrieval(results):
    for result in results:
        if not result.ok:
            continue
        if any(h.email_id == result.email_id for h in result.context_ids):
            raise LeakageDetected(
                'email {} retrieved itself'.format(result.email_id),
                email_id=result.email_id)


def run_matrix(corpus, models, modes, spec=None, backend_for=None,
               provider=None, threat_client=None, k=5, protocol=SPLIT,
               all_labels=False, exclude_fallbacks=False, parallelism=1,
               cell_parallelism=1, engine_options=None, fixtures=None):
    """Classify the held-out emails under every (model, mode) cell.

    ``backend_for(model_spec)`` returns the LLM backend of a model.
    ``fixtures`` maps names to files whose hashes go into the metadata.
    """
    spec = spec or SplitSpec()
    if protocol not in PROTOCOLS:
        raise ValueError('unknown protocol {!r}'.format(protocol))
    corpus = list(corpus)
    if protocol == SPLIT:
        train, test = stratified_split(corpus, spec)
    else:
        # every email is both history and query, never its own context
        _classes(corpus, spec.stratify_on)
        train = test = corpus
    labels = None if all_labels else (LEGITIMATE,)
    index = build_index(provider, train, labels=labels)
    manifest = index.manifest()
    test_ids = set(e.id for e in test)
    if protocol == SPLIT:
        leaked = test_ids.intersection(index.ids)
        if leaked:
            raise LeakageDetected(
                '{} test emails in the index'.format(len(leaked)),
                email_ids=sorted(leaked))
    corpus_by_id = dict((e.id, e) for e in train)
    test_by_id = dict((e.id, e) for e in test)
    options = engine_options or {}

    metadata = OrderedDict([
        ('protocol', protocol),
        ('seed', spec.seed),
        ('train_fraction', spec.train_fraction),
        ('stratify_on', spec.stratify_on),
        ('k', k),
        ('n_train', len(train)),
        ('n_test', len(test)),
        ('index_size', len(index)),
        ('index_labels', 'all' if all_labels else LEGITIMATE),
        ('embedding', provider.name),
        ('exclude_fallbacks', exclude_fallbacks),
        ('fixture_hashes', OrderedDict(
            (name, fixture_hash(path))
            for name, path in sorted((fixtures or {}).items()))),
    ])
    report = EvalReport([m.key for m in models], modes, metadata, manifest)

    def run_cell(model_spec, mode):
        cell = CellResult(model_spec.key, mode)
        try:
            engine = Engine(provider, index, corpus_by_id,
                            backend_for(model_spec), model_spec,
                            threat_client=threat_client, **options)
            opts = ClassifyOptions(rag=(mode == RAG_ON),
                                   threat=threat_client is not None, k=k,
                                   exclude_self=(protocol == FULL))
            results = classify_batch(engine, test, opts, parallelism)
            _assert_no_self_retrieval(results)
        except LeakageDetected:
            raise
        except PhishGuardError as e:
            logger.warning('cell failed model=%s mode=%s error=%s',
                           model_spec.key, mode, e.code)
            cell.error = e.as_dict()
            return cell
        _score_cell(cell, results, test_by_id, exclude_fallbacks)
        logger.info('cell done model=%s mode=%s n=%d fallbacks=%d',
                    model_spec.key, mode, cell.n, cell.fallbacks)
        return cell

    jobs = [(m, mode) for m in models for mode in modes]
    with ThreadPoolExecutor(max_workers=max(1, cell_parallelism)) as pool:
        futures = [pool.submit(run_cell, m, mode) for m, mode in jobs]
        cells = [f.result() for f in futures]
    for cell in cells:
        report.add(cell)
    return report


def _fmt(value):
    if value is None:
        return MISSING
    return '{:.4f}'.format(value)


def render_markdown(report):
    header = ['Model']
    for metric, heading in METRIC_HEADINGS.items():
        for mode in MODES:
            header.append('{} {}'.format(heading, MODE_HEADINGS[mode]))
    lines = ['| ' + ' | '.join(header) + ' |',
             '|' + '|'.join(['---'] * len(header)) + '|']
    for model in report.models:
        row = [model]
        for metric in METRICS:
            for mode in MODES:
                cell = report.cell(model, mode)
                metrics = cell.metrics if cell is not None else None
                row.append(_fmt(metrics[metric]) if metrics else MISSING)
        lines.append('| ' + ' | '.join(row) + ' |')
    notes = []
    for cell in report.cells.values():
        if cell.incomplete:
            notes.append('- {} {}: incomplete ({} failed{})'.format(
                cell.model_key, cell.mode, cell.failed,
                ', ' + cell.error['error'] if cell.error else ''))
        if cell.fallbacks:
            notes.append('- {} {}: {} fail-closed fallbacks{}'.format(
                cell.model_key, cell.mode, cell.fallbacks,
                ' (excluded)' if cell.excluded_fallbacks else ''))
    text = '\n'.join(lines) + '\n'
    if notes:
        text += '\n' + '\n'.join(notes) + '\n'
    return text


def render_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(['model', 'mode', 'metric', 'value'])
    for model in report.models:
        for mode in report.modes:
            cell = report.cell(model, mode)
            metrics = cell.metrics if cell is not None else None
            for metric in METRICS:
                value = metrics[metric] if metrics else None
                writer.writerow([model, mode, metric,
                                 '' if value is None else repr(value)])
    return buf.getvalue()


def emit_report(report, out_dir, formats=('md', 'csv', 'json')):
    """Write report.md, report.csv, report.json and index-manifest.json."""
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    written = []
    renderers = {'md': render_markdown, 'csv': render_csv,
                 'json': lambda r: r.to_json() + '\n'}
    for fmt in formats:
        path = os.path.join(out_dir, 'report.{}'.format(fmt))
        with io.open(path, 'w', encoding='utf-8', newline='') as fh:
            fh.write(renderers[fmt](report))
        written.append(path)
    if report.manifest is not None:
        path = os.path.join(out_dir, 'index-manifest.json')
        with io.open(path, 'w', encoding='utf-8') as fh:
            fh.write(json.dumps(report.manifest, indent=2, sort_keys=True))
        written.append(path)
    return written

