"""Domain and URL reputation lookups for an email under classification.

Speaks the VirusTotal v3 read API (``/domains/{domain}``,
``/urls/{url-id}``) or answers from a fixture file for offline runs.
"""
import base64
import io
import json
import logging
import os
import re
import threading
import time
from datetime import datetime, timezone
from urllib.parse import urlsplit

import requests

from phishguard.main.exceptions import NetworkError, NoAtSign, NotFound, \
    RateLimited


logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = 'https://www.virustotal.com/api/v3'
DEFAULT_TTL = 24 * 60 * 60
DEFAULT_REQUESTS_PER_MINUTE = 4
EMPTY_SUMMARY = 'no domains or urls analyzed'

DOMAIN = 'domain'
URL = 'url'

URL_RE = re.compile(r'https?://[^\s<>"\'`{}|\\^\[\]]+', re.IGNORECASE)
TRAILING_PUNCTUATION = '.,;:!?'


class ThreatElement(object):
    def __init__(self, value, kind):
        self.value = value
        self.kind = kind

    def __eq__(self, other):
        return (isinstance(other, ThreatElement) and
                (self.value, self.kind) == (other.value, other.kind))

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash((self.value, self.kind))

    def __repr__(self):
        return '<ThreatElement {} {}>'.format(self.kind, self.value)

    def as_dict(self):
        return dict(value=self.value, kind=self.kind)


class ElementVerdict(object):
    def __init__(self, element, harmless=0, suspicious=0, malicious=0,
                 reputation=0, engines_total=None, fetched_at=None,
                 not_found=False):
        self.element = element
        self.harmless = int(harmless)
        self.suspicious = int(suspicious)
        self.malicious = int(malicious)
        self.reputation = int(reputation)
        counted = self.harmless + self.suspicious + self.malicious
        if engines_total is None:
            engines_total = counted
        self.engines_total = max(int(engines_total), counted)
        self.fetched_at = fetched_at
        self.not_found = not_found

    def as_dict(self):
        return dict(
            element=self.element.as_dict(),
            harmless=self.harmless,
            suspicious=self.suspicious,
            malicious=self.malicious,
            reputation=self.reputation,
            engines_total=self.engines_total,
            fetched_at=self.fetched_at,
            not_found=self.not_found,
        )

    @classmethod
    def create_from_dict(cls, element, d):
        return cls(
            element,
            harmless=d.get('harmless', 0),
            suspicious=d.get('suspicious', 0),
            malicious=d.get('malicious', 0),
            reputation=d.get('reputation', 0),
            engines_total=d.get('engines_total'),
            fetched_at=d.get('fetched_at'),
            not_found=d.get('not_found', False),
        )


class ThreatReport(object):
    def __init__(self, verdicts=None, errors=None):
        self.verdicts = verdicts or []
        # (element, reason) pairs for failed lookups
        self.errors = errors or []

    def __len__(self):
        return len(self.verdicts) + len(self.errors)

    def as_dict(self):
        return dict(
            verdicts=[v.as_dict() for v in self.verdicts],
            errors=[dict(element=el.as_dict(), reason=reason)
                    for el, reason in self.errors],
        )


def extract_domain(sender):
    if '@' not in sender:
        raise NoAtSign('sender has no @: {!r}'.format(sender))
    address = sender
    if '<' in sender and '>' in sender.rsplit('<', 1)[1]:
        address = sender.rsplit('<', 1)[1].split('>', 1)[0]
        if '@' not in address:
            address = sender
    domain = address.rsplit('@', 1)[1]
    domain = domain.strip().strip('<>').strip().lower().rstrip('.')
    return ThreatElement(domain, DOMAIN)


def _valid_url(candidate):
    try:
        parts = urlsplit(candidate)
    except ValueError:
        return False
    return parts.scheme.lower() in ('http', 'https') and bool(parts.netloc)


def extract_urls(body):
    """http(s) URLs in order of first appearance, without duplicates."""
    found = []
    seen = set()
    for match in URL_RE.finditer(body or ''):
        candidate = match.group(0).rstrip(TRAILING_PUNCTUATION)
        if candidate in seen or not _valid_url(candidate):
            continue
        seen.add(candidate)
        found.append(ThreatElement(candidate, URL))
    return found


def extract_elements(e):
    elements = []
    try:
        elements.append(extract_domain(e.sender))
    except NoAtSign:
        pass
    elements.extend(extract_urls(e.body))
    return elements


def url_id(url):
    return base64.urlsafe_b64encode(url.encode('utf-8')).decode(
        'ascii').strip('=')


class TokenBucket(object):
    """Blocking limiter: ``rate`` requests per minute, burst of one."""

    def __init__(self, rate_per_minute=DEFAULT_REQUESTS_PER_MINUTE,
                 clock=time.monotonic, sleep=time.sleep):
        self.interval = 60.0 / rate_per_minute
        self.clock = clock
        self.sleep = sleep
        self._lock = threading.Lock()
        self._next = None

    def acquire(self):
        with self._lock:
            now = self.clock()
            if self._next is None or self._next <= now:
                self._next = now + self.interval
                return 0.0
            wait = self._next - now
            self._next += self.interval
        self.sleep(wait)
        return wait

    def penalize(self, seconds):
        with self._lock:
            resume = self.clock() + seconds
            if self._next is None or self._next < resume:
                self._next = resume


class ReputationCache(object):
    def __init__(self, ttl=DEFAULT_TTL, path=None, clock=time.time):
        self.ttl = ttl
        self.path = path
        self.clock = clock
        self._lock = threading.Lock()
        self._entries = {}
        if path and os.path.exists(path):
            with io.open(path, encoding='utf-8') as fh:
                self._entries = json.load(fh)

    def _key(self, element):
        return '{}:{}'.format(element.kind, element.value)

    def get(self, element):
        with self._lock:
            entry = self._entries.get(self._key(element))
            if entry is None:
                return None
            if self.clock() - entry['stored_at'] > self.ttl:
                del self._entries[self._key(element)]
                return None
            return ElementVerdict.create_from_dict(element, entry['verdict'])

    def put(self, verdict):
        with self._lock:
            self._entries[self._key(verdict.element)] = dict(
                stored_at=self.clock(), verdict=verdict.as_dict())
            if self.path:
                with io.open(self.path, 'w', encoding='utf-8') as fh:
                    json.dump(self._entries, fh, sort_keys=True)


class ThreatIntelClient(object):
    """Reputation client; ``fixtures`` switches it to offline mode."""

    def __init__(self, base_url=DEFAULT_BASE_URL, api_key='', fixtures=None,
                 cache=None, limiter=None, session=None, timeout=30.0,
                 clock=time.time):
        self.base_url = base_url.rstrip('/')
        self.api_key = api_key
        self.fixtures = fixtures
        self.cache = cache if cache is not None else ReputationCache()
        self.limiter = limiter
        self.session = session
        self.timeout = timeout
        self.clock = clock
        self.network_calls = 0
        if fixtures is None:
            self.session = session or requests.Session()
            if self.limiter is None:
                self.limiter = TokenBucket()

    @classmethod
    def from_fixture_file(cls, path, **kwargs):
        with io.open(path, encoding='utf-8') as fh:
            return cls(fixtures=json.load(fh), **kwargs)

    def _fixture_lookup(self, element):
        if element.value not in self.fixtures:
            raise NotFound('{} not in fixtures'.format(element.value))
        return ElementVerdict.create_from_dict(
            element, self.fixtures[element.value])

    def _endpoint(self, element):
        if element.kind == DOMAIN:
            return '{}/domains/{}'.format(self.base_url, element.value)
        return '{}/urls/{}'.format(self.base_url, url_id(element.value))

    def _remote_lookup(self, element):
        self.limiter.acquire()
        self.network_calls += 1
        try:
            resp = self.session.get(
                self._endpoint(element),
                headers={'x-apikey': self.api_key,
                         'Accept': 'application/json'},
                timeout=self.timeout)
        except requests.RequestException as e:
            raise NetworkError(str(e), element=element.value)
        if resp.status_code == 404:
            raise NotFound('{} unknown to service'.format(element.value))
        if resp.status_code == 429:
            retry_after = _retry_after(resp)
            self.limiter.penalize(retry_after)
            raise RateLimited('rate limited', retry_after=retry_after,
                              element=element.value)
        if resp.status_code >= 400:
            raise NetworkError('http {}'.format(resp.status_code),
                               status=resp.status_code,
                               element=element.value)
        try:
            attrs = resp.json()['data']['attributes']
        except (ValueError, KeyError, TypeError):
            raise NetworkError('malformed reputation response',
                               element=element.value)
        stats = attrs.get('last_analysis_stats') or {}
        return ElementVerdict(
            element,
            harmless=stats.get('harmless', 0),
            suspicious=stats.get('suspicious', 0),
            malicious=stats.get('malicious', 0),
            reputation=attrs.get('reputation', 0),
            engines_total=sum(v for v in stats.values()
                              if isinstance(v, int)),
            fetched_at=_timestamp(self.clock()))

    def lookup_reputation(self, element):
        cached = self.cache.get(element)
        if cached is not None:
            logger.debug('reputation cache hit %s', element.value)
            return cached
        try:
            if self.fixtures is not None:
                verdict = self._fixture_lookup(element)
            else:
                verdict = self._remote_lookup(element)
        except NotFound:
            verdict = ElementVerdict(element, not_found=True)
        self.cache.put(verdict)
        return verdict

    def analyze(self, e):
        """Look up the sender domain and every body URL of ``e``.

        Failed lookups land in ``report.errors``; they never abort.
        """
        report = ThreatReport()
        for element in extract_elements(e):
            try:
                report.verdicts.append(self.lookup_reputation(element))
            except (RateLimited, NetworkError) as err:
                logger.warning('reputation lookup failed element=%s reason=%s',
                               element.value, err.code)
                report.errors.append((element, err.code))
        return report


def _retry_after(resp):
    try:
        return float(resp.headers.get('Retry-After', 60))
    except ValueError:
        return 60.0


def _timestamp(seconds):
    return datetime.fromtimestamp(seconds, tz=timezone.utc).isoformat()


def _verdict_line(v):
    line = '{} {}: malicious={} suspicious={} harmless={} ' \
           'reputation={} (of {} engines)'.format(
               v.element.kind, v.element.value, v.malicious, v.suspicious,
               v.harmless, v.reputation, v.engines_total)
    if v.not_found:
        line += ' unknown to service'
    return line


def summarize_threat(report, max_chars=1200):
    """One line per element, most malicious first, cut at a line boundary."""
    if len(report) == 0:
        return EMPTY_SUMMARY
    verdicts = sorted(report.verdicts,
                      key=lambda v: (-v.malicious, v.element.value))
    lines = [_verdict_line(v) for v in verdicts]
    lines.extend('{} {}: reputation unavailable'.format(el.kind, el.value)
                 for el, _ in sorted(report.errors,
                                     key=lambda pair: pair[0].value))
    full = '\n'.join(lines)
    if len(full) <= max_chars:
        return full
    for keep in range(len(lines) - 1, -1, -1):
        suffix = '(+{} more)'.format(len(lines) - keep)
        text = '\n'.join(lines[:keep] + [suffix])
        if len(text) <= max_chars:
            return text
    return '(+{} more)'.format(len(lines))[:max_chars]


def client_from_config(config, fixtures_path=None):
    fixtures_path = fixtures_path or config.get('FIXTURES')
    cache = ReputationCache(ttl=config.get('CACHE_TTL', DEFAULT_TTL),
                            path=config.get('CACHE_PATH'))
    if fixtures_path:
        return ThreatIntelClient.from_fixture_file(fixtures_path, cache=cache)
    return ThreatIntelClient(
        base_url=config.get('BASE_URL') or DEFAULT_BASE_URL,
        api_key=config.get('API_KEY', ''),
        cache=cache,
        limiter=TokenBucket(config.get('REQUESTS_PER_MINUTE',
                                       DEFAULT_REQUESTS_PER_MINUTE)))
