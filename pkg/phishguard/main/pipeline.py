"""One classification, end to end.

Stages run in a fixed order: embed, retrieve, threat, prompt, complete,
parse. Stages switched off by the options are skipped and left out of
the timings record.
"""
import json
import logging
import os
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

from django.conf import settings

from phishguard.main.config import ServiceConfig
from phishguard.main.emails import read_corpus
from phishguard.main.embedding import embed_email, get_embedding_provider, \
    l2_normalize
from phishguard.main.exceptions import DimensionMismatch, EmbeddingFailed, \
    LlmError, LlmExhausted, PhishGuardError, ProviderUnavailable, \
    VerdictError, ZeroVector
from phishguard.main.llm import ChatRequest, backend_from_selection, lookup
from phishguard.main.metrics import get_stats_client
from phishguard.main.prompts import DEFAULT_BUDGET_CHARS, EXCERPT_CHARS, \
    NO_HISTORY, NONE_AVAILABLE, budget_for_model, build_prompt, \
    consistency_check, fallback_verdict, parse_verdict
from phishguard.main.threatintel import ThreatReport, client_from_config, \
    summarize_threat
from phishguard.main.vectorindex import FlatIndex, index_load


logger = logging.getLogger(__name__)

STAGES = ('embed', 'retrieve', 'threat', 'prompt', 'complete', 'parse')

REASK_SUFFIX = (
    '\n\nYour previous reply could not be parsed. Respond again with only '
    'the JSON object described above.')


class ClassifyOptions(object):
    def __init__(self, rag=True, threat=True, k=5, exclude_self=False):
        if k < 1:
            raise ValueError('k must be >= 1')
        self.rag = rag
        self.threat = threat
        self.k = k
        self.exclude_self = exclude_self

    def as_dict(self):
        return dict(rag=self.rag, threat=self.threat, k=self.k,
                    exclude_self=self.exclude_self)


class ClassificationResult(object):
    def __init__(self, email_id, verdict, context_ids, threat_report,
                 model_key, rag_enabled, threat_enabled=True, timings=None,
                 fallback_used=False, warnings=None):
        self.email_id = email_id
        self.verdict = verdict
        # SearchHit list, rank order
        self.context_ids = list(context_ids)
        self.threat_report = threat_report
        self.model_key = model_key
        self.rag_enabled = rag_enabled
        self.threat_enabled = threat_enabled
        self.timings = timings if timings is not None else OrderedDict()
        self.fallback_used = fallback_used
        self.warnings = list(warnings or [])

    @property
    def ok(self):
        return True

    def as_dict(self, include_timings=True):
        d = OrderedDict()
        d['email_id'] = self.email_id
        d['model_key'] = self.model_key
        d['rag_enabled'] = self.rag_enabled
        d['threat_enabled'] = self.threat_enabled
        d['fallback_used'] = self.fallback_used
        d['verdict'] = self.verdict.as_dict()
        d['context_ids'] = [h.as_dict() for h in self.context_ids]
        d['threat_report'] = self.threat_report.as_dict()
        d['warnings'] = self.warnings
        if include_timings:
            d['timings'] = OrderedDict(
                (k, round(v, 6)) for k, v in self.timings.items())
        return d

    def to_json(self, include_timings=True):
        return json.dumps(self.as_dict(include_timings))


class ClassificationFailure(object):
    """Per-email error record of a batch run."""

    def __init__(self, email_id, error):
        self.email_id = email_id
        self.error = error

    @property
    def ok(self):
        return False

    def as_dict(self, include_timings=True):
        return OrderedDict([('email_id', self.email_id),
                            ('error', self.error.as_dict())])

    def to_json(self, include_timings=True):
        return json.dumps(self.as_dict())


class _StageClock(object):
    def __init__(self, stats):
        self.stats = stats
        self.timings = OrderedDict()

    def run(self, name, fn):
        started = time.perf_counter()
        try:
            return fn()
        finally:
            elapsed = time.perf_counter() - started
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            self.stats.timing('stage.' + name, elapsed * 1000.0)


class Engine(object):
    """Immutable once built; safe to share across threads."""

    def __init__(self, provider, index, corpus, backend, model_spec,
                 threat_client=None, budget=DEFAULT_BUDGET_CHARS,
                 excerpt_chars=EXCERPT_CHARS, fail_closed=True, reask=True,
                 temperature=0.2, max_output_tokens=1024, stats=None,
                 options=None):
        self.provider = provider
        self.index = index if index is not None else \
            FlatIndex(provider.dim).freeze()
        self.corpus = dict(corpus or {})
        self.backend = backend
        self.model_spec = model_spec
        self.threat_client = threat_client
        self.budget = budget_for_model(model_spec, max_output_tokens, budget)
        self.excerpt_chars = excerpt_chars
        self.fail_closed = fail_closed
        self.reask = reask
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.stats = stats or get_stats_client()
        # defaults for callers that pass no options
        self.options = options or ClassifyOptions()

    def _embed(self, e):
        try:
            return l2_normalize(embed_email(self.provider, e))
        except (ProviderUnavailable, ZeroVector, DimensionMismatch) as err:
            raise EmbeddingFailed(
                'embedding failed for {}: {}'.format(e.id, err.message),
                email_id=e.id, cause=err.code)

    def _retrieve(self, e, query, options):
        if len(self.index) == 0:
            return []
        exclude = (e.id,) if options.exclude_self else ()
        hits = self.index.search(query, k=options.k, exclude=exclude)
        kept = []
        for hit in hits:
            if hit.email_id not in self.corpus:
                logger.warning('retrieved id missing from corpus id=%s',
                               hit.email_id)
                continue
            kept.append(hit)
        return kept

    def _threat(self, e):
        report = self.threat_client.analyze(e)
        return report, summarize_threat(report)

    def _request(self, bundle, suffix=''):
        return ChatRequest(user_message=bundle.rendered + suffix,
                           system_message=bundle.system_message,
                           temperature=self.temperature,
                           max_output_tokens=self.max_output_tokens)

    def _fallback(self, e, reason):
        logger.warning('fail-closed fallback email=%s model=%s reason=%s',
                       e.id, self.model_spec.key, reason)
        self.stats.incr('fallback')
        return fallback_verdict()

    def classify(self, e, options=None):
        options = options or self.options
        clock = _StageClock(self.stats)
        hits = []
        empty_context = NONE_AVAILABLE
        if options.rag:
            query = clock.run('embed', lambda: self._embed(e))
            hits = clock.run('retrieve',
                             lambda: self._retrieve(e, query, options))
            if len(self.index) == 0:
                empty_context = NO_HISTORY
        report, threat_text = ThreatReport(), NONE_AVAILABLE
        if options.threat and self.threat_client is not None:
            report, threat_text = clock.run('threat', lambda: self._threat(e))
        context = [self.corpus[h.email_id] for h in hits]
        bundle = clock.run('prompt', lambda: build_prompt(
            e, context, threat_text, budget=self.budget,
            excerpt_chars=self.excerpt_chars, empty_context=empty_context))

        fallback_used = False
        try:
            raw = clock.run('complete', lambda: self.backend.complete(
                self._request(bundle)))
        except LlmError as err:
            if not self.fail_closed:
                raise LlmExhausted(
                    'model {} failed: {}'.format(
                        self.model_spec.key, err.message),
                    email_id=e.id, cause=err.code)
            raw = None
            verdict = self._fallback(e, err.code)
            fallback_used = True

        if raw is not None:
            verdict = clock.run('parse', lambda: self._parse(e, bundle, raw))
            fallback_used = verdict is None
            if verdict is None:
                verdict = self._fallback(e, 'unparseable')

        return ClassificationResult(
            email_id=e.id,
            verdict=verdict,
            context_ids=hits,
            threat_report=report,
            model_key=self.model_spec.key,
            rag_enabled=options.rag,
            threat_enabled=options.threat and self.threat_client is not None,
            timings=clock.timings,
            fallback_used=fallback_used,
            warnings=consistency_check(verdict))

    def _parse(self, e, bundle, raw):
        try:
            return parse_verdict(raw)
        except VerdictError:
            if not self.reask:
                return None
        logger.info('re-asking model=%s email=%s', self.model_spec.key, e.id)
        try:
            raw = self.backend.complete(self._request(bundle, REASK_SUFFIX))
            return parse_verdict(raw)
        except VerdictError:
            return None
        except LlmError as err:
            if not self.fail_closed:
                raise LlmExhausted(
                    're-ask failed: {}'.format(err.message),
                    email_id=e.id, cause=err.code)
            return None


def classify(engine, e, options=None):
    return engine.classify(e, options)


def classify_batch(engine, emails, options=None, parallelism=1):
    """Results in input order; a failing email yields a failure record."""
    if parallelism < 1:
        raise ValueError('parallelism must be >= 1')
    emails = list(emails)

    def one(e):
        try:
            return engine.classify(e, options)
        except PhishGuardError as err:
            logger.warning('classification failed email=%s error=%s',
                           e.id, err.code)
            return ClassificationFailure(e.id, err)

    if parallelism == 1 or len(emails) < 2:
        return [one(e) for e in emails]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, emails))


def build_engine(service_config, provider=None, backend=None,
                 threat_client=None):
    """Assemble an Engine from a ServiceConfig and the Django settings."""
    llm_config = settings.PHISHGUARD_LLM
    pipeline_config = settings.PHISHGUARD_PIPELINE
    provider = provider or get_embedding_provider()
    spec = lookup(service_config.model_key)
    index = None
    if service_config.index_path and os.path.exists(service_config.index_path):
        index = index_load(service_config.index_path,
                           expected_dim=provider.dim)
    corpus = {}
    if service_config.corpus_path:
        corpus = dict((e.id, e) for e in read_corpus(
            service_config.corpus_path))
    if backend is None:
        backend = backend_from_selection(service_config.backend, spec,
                                         llm_config)
    if threat_client is None and service_config.threat:
        threat_client = client_from_config(
            settings.PHISHGUARD_THREAT_INTEL,
            fixtures_path=service_config.threat_fixtures)
    return Engine(
        provider, index, corpus, backend, spec,
        threat_client=threat_client,
        budget=service_config.budget or pipeline_config.get(
            'BUDGET_CHARS', DEFAULT_BUDGET_CHARS),
        excerpt_chars=pipeline_config.get('EXCERPT_CHARS', EXCERPT_CHARS),
        fail_closed=pipeline_config.get('FAIL_CLOSED', True),
        reask=pipeline_config.get('REASK', True),
        temperature=llm_config.get('TEMPERATURE', 0.2),
        max_output_tokens=llm_config.get('MAX_OUTPUT_TOKENS', 1024),
        options=ClassifyOptions(rag=service_config.rag,
                                threat=service_config.threat,
                                k=service_config.k))


_service_engine = None
_service_lock = threading.Lock()


def set_service_engine(engine):
    """Install the engine the HTTP views classify with; None resets it."""
    global _service_engine
    with _service_lock:
        _service_engine = engine


def get_service_engine():
    global _service_engine
    with _service_lock:
        if _service_engine is None:
            _service_engine = build_engine(ServiceConfig.from_settings())
        return _service_engine
