"""Embedding providers and the vector arithmetic retrieval relies on."""
import hashlib
import logging
import re
import threading
from functools import lru_cache

import numpy as np
import requests
from django.conf import settings

from phishguard.main.exceptions import DimensionMismatch, \
    ProviderUnavailable, ZeroVector
from phishguard.main.retry import RetryableError, call_with_retries


logger = logging.getLogger(__name__)

DEFAULT_DIM = 384
MAX_INPUT_CHARS = 8000
NORM_TOLERANCE = 1e-6
ZERO_NORM = 1e-12

TOKEN_SPLIT_RE = re.compile(r'[^0-9A-Za-z]+')


class EmbeddingVector(object):
    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DimensionMismatch('embedding must be a non-empty vector')
        if not np.all(np.isfinite(values)):
            raise ValueError('embedding has non-finite components')
        self.values = values

    @property
    def dim(self):
        return self.values.shape[0]

    def norm(self):
        return float(np.linalg.norm(self.values))

    def is_unit(self, tolerance=NORM_TOLERANCE):
        return abs(self.norm() - 1.0) <= tolerance

    def __eq__(self, other):
        return (isinstance(other, EmbeddingVector) and
                np.array_equal(self.values, other.values))

    def __ne__(self, other):
        return not self.__eq__(other)

    def __len__(self):
        return self.dim

    def tolist(self):
        return self.values.tolist()


def _vector(v):
    if isinstance(v, EmbeddingVector):
        return v
    return EmbeddingVector(v)


def l2_normalize(v):
    v = _vector(v)
    norm = v.norm()
    if norm < ZERO_NORM:
        raise ZeroVector('cannot normalize a zero vector')
    return EmbeddingVector(v.values / norm)


def cosine_similarity(a, b):
    a, b = _vector(a), _vector(b)
    if a.dim != b.dim:
        raise DimensionMismatch(
            'dimension {} != {}'.format(a.dim, b.dim),
            expected=a.dim, actual=b.dim)
    na, nb = a.norm(), b.norm()
    if na < ZERO_NORM or nb < ZERO_NORM:
        raise ZeroVector('cosine similarity of a zero vector')
    sim = float(np.dot(a.values, b.values) / (na * nb))
    return min(1.0, max(-1.0, sim))


def _token_hash(token, seed):
    digest = hashlib.blake2b(
        token.encode('utf-8'), digest_size=8,
        key=str(seed).encode('ascii')).digest()
    return int.from_bytes(digest, 'little')


def hash_embed(text, dim=DEFAULT_DIM, seed=0):
    """Signed feature hashing of alphanumeric tokens.

    Each token picks a bucket and a sign from a keyed hash, so the vector
    is deterministic for (text, dim, seed) and similar texts share buckets.
    """
    if dim < 1:
        raise ValueError('dim must be >= 1')
    values = np.zeros(dim, dtype=np.float64)
    for token in TOKEN_SPLIT_RE.split(text or ''):
        if not token:
            continue
        h = _token_hash(token, seed)
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        values[h % dim] += sign
    return EmbeddingVector(values)


class HashEmbeddingProvider(object):
    kind = 'hash'

    def __init__(self, dim=DEFAULT_DIM, seed=0,
                 max_input_chars=MAX_INPUT_CHARS):
        self.dim = dim
        self.seed = seed
        self.max_input_chars = max_input_chars
        self.name = 'hash-{}-{}'.format(dim, seed)

    def embed(self, text):
        return hash_embed(text, self.dim, self.seed)


class RemoteEmbeddingProvider(object):
    """JSON-over-HTTP embeddings endpoint.

    Request ``{"input": [text], "model": name}``, response
    ``{"data": [{"embedding": [...]}]}``.
    """
    kind = 'remote'

    def __init__(self, base_url, model, api_key='', dim=DEFAULT_DIM,
                 max_in_flight=4, max_retries=3, timeout=30.0,
                 max_input_chars=MAX_INPUT_CHARS, session=None,
                 sleep=None):
        self.base_url = base_url.rstrip('/')
        self.name = model
        self.api_key = api_key
        self.dim = dim
        self.max_retries = max_retries
        self.timeout = timeout
        self.max_input_chars = max_input_chars
        self.session = session or requests.Session()
        self.sleep = sleep
        self._in_flight = threading.BoundedSemaphore(max_in_flight)

    def _post(self, text):
        headers = {'Content-Type': 'application/json'}
        if self.api_key:
            headers['Authorization'] = 'Bearer {}'.format(self.api_key)
        try:
            resp = self.session.post(
                self.base_url + '/embeddings',
                json={'input': [text], 'model': self.name},
                headers=headers, timeout=self.timeout)
        except requests.RequestException as e:
            raise RetryableError(str(e))
        if resp.status_code == 429 or resp.status_code >= 500:
            raise RetryableError('http {}'.format(resp.status_code))
        if resp.status_code >= 400:
            raise ProviderUnavailable(
                'embedding endpoint returned {}'.format(resp.status_code),
                status=resp.status_code, attempts=1)
        try:
            return resp.json()['data'][0]['embedding']
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProviderUnavailable('malformed embedding response',
                                      attempts=1)

    def _attempt(self, text):
        # the slot is held per attempt, never across a backoff sleep
        with self._in_flight:
            return self._post(text)

    def embed(self, text):
        kwargs = {'max_retries': self.max_retries, 'label': 'embed'}
        if self.sleep is not None:
            kwargs['sleep'] = self.sleep
        try:
            values, attempts = call_with_retries(
                lambda: self._attempt(text), **kwargs)
        except RetryableError as e:
            raise ProviderUnavailable(
                'embedding provider unreachable: {}'.format(e.reason),
                attempts=getattr(e, 'attempts', self.max_retries + 1))
        if len(values) != self.dim:
            raise DimensionMismatch(
                'provider returned {} dims, expected {}'.format(
                    len(values), self.dim),
                expected=self.dim, actual=len(values))
        return EmbeddingVector(values)


def email_text(e, max_chars=MAX_INPUT_CHARS):
    # the body sits last, so truncation keeps the head of the email
    return ' '.join((e.subject, e.sender, e.body))[:max_chars]


def embed_email(provider, e):
    """Raw (un-normalized) embedding of subject, sender and body."""
    v = provider.embed(email_text(e, provider.max_input_chars))
    if v.dim != provider.dim:
        raise DimensionMismatch(
            'provider returned {} dims, expected {}'.format(
                v.dim, provider.dim),
            expected=provider.dim, actual=v.dim)
    return v


def provider_from_config(config):
    kind = config.get('PROVIDER', 'hash')
    dim = int(config.get('DIM', DEFAULT_DIM))
    max_chars = int(config.get('MAX_INPUT_CHARS', MAX_INPUT_CHARS))
    if kind == 'hash':
        return HashEmbeddingProvider(dim=dim, seed=int(config.get('SEED', 0)),
                                     max_input_chars=max_chars)
    if kind == 'remote':
        return RemoteEmbeddingProvider(
            config['BASE_URL'], config['MODEL'],
            api_key=config.get('API_KEY', ''), dim=dim,
            max_in_flight=int(config.get('MAX_IN_FLIGHT', 4)),
            max_input_chars=max_chars)
    raise ValueError('unknown embedding provider {!r}'.format(kind))


@lru_cache(maxsize=1)
def get_embedding_provider():
    return provider_from_config(settings.PHISHGUARD_EMBEDDING)
