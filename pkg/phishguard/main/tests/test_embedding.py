from unittest import mock

import numpy as np
import requests
from django.test import TestCase

from phishguard.main.embedding import EmbeddingVector, \
    HashEmbeddingProvider, RemoteEmbeddingProvider, cosine_similarity, \
    email_text, embed_email, hash_embed, l2_normalize, provider_from_config
from phishguard.main.exceptions import DimensionMismatch, \
    ProviderUnavailable, ZeroVector
from phishguard.main.tests.factories import CleanEmailFactory


def response(status=200, payload=None):
    resp = mock.Mock(status_code=status)
    resp.json.return_value = payload
    return resp


class VectorMathTest(TestCase):
    def setUp(self):
        self.rng = np.random.RandomState(1234)

    def random_vector(self, dim=16):
        v = self.rng.normal(size=dim)
        while np.linalg.norm(v) < 1e-3:
            v = self.rng.normal(size=dim)
        return v

    def test_normalize_idempotent(self):
        for _ in range(10000):
            once = l2_normalize(self.random_vector())
            self.assertAlmostEqual(once.norm(), 1.0, delta=1e-6)
            twice = l2_normalize(once)
            self.assertTrue(np.allclose(once.values, twice.values,
                                        atol=1e-9))

    def test_cosine_properties(self):
        for _ in range(10000):
            a, b = self.random_vector(), self.random_vector()
            sim = cosine_similarity(a, b)
            self.assertTrue(-1.0 <= sim <= 1.0)
            self.assertAlmostEqual(sim, cosine_similarity(b, a), delta=1e-9)
            scale = self.rng.uniform(0.1, 10.0)
            self.assertAlmostEqual(sim, cosine_similarity(a * scale, b),
                                   delta=1e-9)
            dot = float(np.dot(l2_normalize(a).values,
                               l2_normalize(b).values))
            self.assertAlmostEqual(sim, dot, delta=1e-9)

    def test_cosine_self(self):
        v = self.random_vector()
        self.assertAlmostEqual(cosine_similarity(v, v), 1.0, delta=1e-9)

    def test_zero_vector(self):
        with self.assertRaises(ZeroVector):
            l2_normalize([0.0, 0.0, 0.0])
        with self.assertRaises(ZeroVector):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])

    def test_vector_rejects_bad_values(self):
        with self.assertRaises(DimensionMismatch):
            EmbeddingVector([])
        with self.assertRaises(ValueError):
            EmbeddingVector([1.0, float('nan')])


class HashEmbedTest(TestCase):
    def test_deterministic(self):
        self.assertEqual(hash_embed('pay the invoice'),
                         hash_embed('pay the invoice'))

    def test_dim_and_seed(self):
        v = hash_embed('pay the invoice', dim=32, seed=3)
        self.assertEqual(v.dim, 32)
        self.assertNotEqual(hash_embed('pay the invoice', seed=1),
                            hash_embed('pay the invoice', seed=2))

    def test_different_tokens(self):
        self.assertFalse(np.array_equal(hash_embed('abc').values,
                                        hash_embed('abd').values))

    def test_shared_tokens_are_closer(self):
        base = hash_embed('invoice payment due')
        near = hash_embed('invoice payment overdue')
        far = hash_embed('kitten photos attached')
        self.assertGreater(cosine_similarity(base, near),
                           cosine_similarity(base, far))

    def test_empty_text_is_zero(self):
        self.assertEqual(hash_embed('').norm(), 0.0)


class ProviderTest(TestCase):
    def test_hash_provider(self):
        provider = HashEmbeddingProvider(dim=64, seed=0)
        e = CleanEmailFactory()
        v = embed_email(provider, e)
        self.assertEqual(v.dim, 64)
        self.assertEqual(provider.name, 'hash-64-0')

    def test_email_text_truncated(self):
        e = CleanEmailFactory(subject='s', sender='a@b.co', body='x' * 100)
        self.assertEqual(email_text(e, max_chars=10), 's a@b.co x')

    def test_provider_from_config(self):
        provider = provider_from_config({'PROVIDER': 'hash', 'DIM': 16})
        self.assertEqual(provider.dim, 16)
        remote = provider_from_config({
            'PROVIDER': 'remote', 'BASE_URL': 'http://embed.local/',
            'MODEL': 'minilm', 'DIM': 3})
        self.assertEqual(remote.base_url, 'http://embed.local')
        with self.assertRaises(ValueError):
            provider_from_config({'PROVIDER': 'carrier-pigeon'})


class RemoteEmbeddingProviderTest(TestCase):
    def provider(self, session, dim=3):
        return RemoteEmbeddingProvider(
            'http://embed.local', 'minilm', api_key='k', dim=dim,
            max_retries=2, session=session, sleep=lambda s: None)

    def test_embed(self):
        session = mock.Mock()
        session.post.return_value = response(
            payload={'data': [{'embedding': [0.1, 0.2, 0.3]}]})
        v = self.provider(session).embed('hello')
        self.assertEqual(v.tolist(), [0.1, 0.2, 0.3])
        args, kwargs = session.post.call_args
        self.assertEqual(args[0], 'http://embed.local/embeddings')
        self.assertEqual(kwargs['json'], {'input': ['hello'],
                                          'model': 'minilm'})
        self.assertEqual(kwargs['headers']['Authorization'], 'Bearer k')

    def test_retries_server_errors(self):
        session = mock.Mock()
        session.post.side_effect = [
            response(503),
            response(payload={'data': [{'embedding': [1.0, 0.0, 0.0]}]}),
        ]
        v = self.provider(session).embed('hello')
        self.assertEqual(v.dim, 3)
        self.assertEqual(session.post.call_count, 2)

    def test_unreachable(self):
        session = mock.Mock()
        session.post.side_effect = requests.ConnectionError('refused')
        with self.assertRaises(ProviderUnavailable) as cm:
            self.provider(session).embed('hello')
        self.assertEqual(cm.exception.attempts, 3)

    def test_client_error(self):
        session = mock.Mock()
        session.post.return_value = response(400)
        with self.assertRaises(ProviderUnavailable):
            self.provider(session).embed('hello')
        self.assertEqual(session.post.call_count, 1)

    def test_slot_free_during_backoff(self):
        session = mock.Mock()
        session.post.side_effect = [
            response(503),
            response(payload={'data': [{'embedding': [1.0, 0.0, 0.0]}]}),
        ]
        free = []

        def sleep(delay):
            acquired = provider._in_flight.acquire(blocking=False)
            if acquired:
                provider._in_flight.release()
            free.append(acquired)

        provider = RemoteEmbeddingProvider(
            'http://embed.local', 'minilm', dim=3, max_in_flight=1,
            session=session, sleep=sleep)
        provider.embed('hello')
        self.assertEqual(free, [True])

    def test_wrong_dimension(self):
        session = mock.Mock()
        session.post.return_value = response(
            payload={'data': [{'embedding': [0.1, 0.2]}]})
        with self.assertRaises(DimensionMismatch):
            self.provider(session).embed('hello')
