import threading
import time
from concurrent.futures import ThreadPoolExecutor
from unittest import mock

import requests
from django.test import TestCase

from phishguard.main.exceptions import AuthFailed, ContextOverflow, \
    Exhausted, NoDefaultRule, UnknownModel
from phishguard.main.llm import SYSTEM_MESSAGE, ChatRequest, \
    RemoteBackend, ScriptedBackend, ScriptedRule, backend_from_selection, \
    complete, lookup, registry_default, scripted_backend
from phishguard.main.tests.synthetic import SCRIPTED_RULES


def chat_response(status=200, text='{"ok": true}', headers=None,
                  payload=None):
    resp = mock.Mock(status_code=status, headers=headers or {})
    if payload is None:
        payload = {'choices': [{'message': {'content': text}}],
                   'usage': {'prompt_tokens': 10, 'completion_tokens': 5}}
    resp.json.return_value = payload
    return resp


class RegistryTest(TestCase):
    def test_default_models(self):
        self.assertEqual([m.key for m in registry_default()], [
            'llama4-scout', 'deepseek-r1', 'mistral-saba', 'gemma2-9b'])

    def test_lookup(self):
        spec = lookup('llama4-scout', environ={})
        self.assertEqual(spec.context_window_tokens, 131000)
        self.assertEqual(spec.provider_label, 'Meta')
        self.assertEqual(lookup('gemma2-9b', environ={})
                         .context_window_tokens, 8000)

    def test_unknown(self):
        with self.assertRaises(UnknownModel):
            lookup('gpt-2')

    def test_endpoint_override(self):
        spec = lookup('mistral-saba',
                      environ={'LLM_MODEL_ID_MISTRAL_SABA': 'saba-local'})
        self.assertEqual(spec.endpoint_model_id, 'saba-local')


class ChatRequestTest(TestCase):
    def test_estimate(self):
        req = ChatRequest('x' * 400, system_message='y' * 100,
                          max_output_tokens=1024)
        self.assertEqual(req.estimated_tokens(), 125 + 1024)

    def test_messages(self):
        req = ChatRequest('classify this')
        self.assertEqual(req.messages(), [
            {'role': 'system', 'content': SYSTEM_MESSAGE},
            {'role': 'user', 'content': 'classify this'}])

    def test_empty(self):
        with self.assertRaises(ValueError):
            ChatRequest('')


class RemoteBackendTest(TestCase):
    def setUp(self):
        self.session = mock.Mock()
        self.delays = []
        self.spec = lookup('llama4-scout', environ={})

    def backend(self, **kwargs):
        return RemoteBackend('https://llm.local/v1/', 'secret', self.spec,
                             session=self.session,
                             sleep=self.delays.append, **kwargs)

    def test_complete(self):
        self.session.post.return_value = chat_response(text='hello')
        completion = self.backend().complete_with_meta(
            ChatRequest('classify', temperature=0.2, max_output_tokens=64))
        self.assertEqual(completion.text, 'hello')
        self.assertEqual(completion.attempts, 1)
        self.assertEqual(completion.usage['completion_tokens'], 5)
        args, kwargs = self.session.post.call_args
        self.assertEqual(args[0], 'https://llm.local/v1/chat/completions')
        self.assertEqual(kwargs['json']['model'],
                         'meta-llama/llama-4-scout-17b-16e-instruct')
        self.assertEqual(kwargs['json']['temperature'], 0.2)
        self.assertEqual(kwargs['json']['max_tokens'], 64)
        self.assertEqual(kwargs['headers']['Authorization'], 'Bearer secret')

    def test_auth_failed_not_retried(self):
        self.session.post.return_value = chat_response(401)
        with self.assertRaises(AuthFailed):
            self.backend().complete(ChatRequest('classify'))
        self.assertEqual(self.session.post.call_count, 1)

    def test_rate_limit_honours_retry_after(self):
        self.session.post.side_effect = [
            chat_response(429, headers={'Retry-After': '12'}),
            chat_response(text='ok'),
        ]
        completion = self.backend().complete_with_meta(
            ChatRequest('classify'))
        self.assertEqual(completion.text, 'ok')
        self.assertEqual(completion.attempts, 2)
        self.assertEqual(len(self.delays), 1)
        self.assertGreaterEqual(self.delays[0], 12)

    def test_exhausted(self):
        self.session.post.return_value = chat_response(503)
        with self.assertRaises(Exhausted) as cm:
            self.backend(max_retries=2).complete(ChatRequest('classify'))
        self.assertEqual(cm.exception.attempts, 3)
        self.assertEqual(self.session.post.call_count, 3)

    def test_connection_error_retried(self):
        self.session.post.side_effect = [
            requests.ConnectionError('refused'), chat_response(text='ok')]
        self.assertEqual(self.backend().complete(ChatRequest('classify')),
                         'ok')

    def test_malformed_body_retried(self):
        self.session.post.side_effect = [
            chat_response(payload={'choices': []}), chat_response(text='ok')]
        self.assertEqual(self.backend().complete(ChatRequest('classify')),
                         'ok')

    def test_client_error_not_retried(self):
        self.session.post.return_value = chat_response(400)
        with self.assertRaises(Exhausted):
            self.backend().complete(ChatRequest('classify'))
        self.assertEqual(self.session.post.call_count, 1)

    def test_context_overflow(self):
        self.spec = lookup('gemma2-9b', environ={})
        with self.assertRaises(ContextOverflow):
            self.backend().complete(ChatRequest('x' * 40000))
        self.assertEqual(self.session.post.call_count, 0)

    def test_in_flight_bound(self):
        lock = threading.Lock()
        state = {'now': 0, 'peak': 0}

        def post(*args, **kwargs):
            with lock:
                state['now'] += 1
                state['peak'] = max(state['peak'], state['now'])
            time.sleep(0.02)
            with lock:
                state['now'] -= 1
            return chat_response(text='ok')

        self.session.post.side_effect = post
        backend = self.backend(max_in_flight=2)
        with ThreadPoolExecutor(max_workers=6) as pool:
            texts = list(pool.map(
                lambda i: backend.complete(ChatRequest('m{}'.format(i))),
                range(12)))
        self.assertEqual(texts, ['ok'] * 12)
        self.assertLessEqual(state['peak'], 2)

    def test_slot_free_during_backoff(self):
        self.session.post.side_effect = [
            chat_response(429, headers={'Retry-After': '1'}),
            chat_response(text='ok')]
        free = []

        def sleep(delay):
            acquired = backend._in_flight.acquire(blocking=False)
            if acquired:
                backend._in_flight.release()
            free.append(acquired)

        backend = RemoteBackend('https://llm.local/v1', 'secret', self.spec,
                                max_in_flight=1, session=self.session,
                                sleep=sleep)
        self.assertEqual(backend.complete(ChatRequest('classify')), 'ok')
        self.assertEqual(free, [True])


class ScriptedBackendTest(TestCase):
    def test_first_match_wins(self):
        backend = scripted_backend([
            {'when': {'contains': 'evil'}, 'response': 'first'},
            {'when': {'contains': 'evil.test'}, 'response': 'second'},
            {'default': True, 'response': {'a': 1}},
        ])
        self.assertEqual(complete(backend, ChatRequest('see evil.test')),
                         'first')
        self.assertEqual(complete(backend, ChatRequest('hello')),
                         '{"a": 1}')
        self.assertEqual(backend.calls, 2)

    def test_count_and_absent(self):
        rule = ScriptedRule('r', count={'text': 'wire', 'at_least': 3},
                            absent=['never'])
        self.assertTrue(rule.matches('wire wire wire'))
        self.assertFalse(rule.matches('wire wire'))
        self.assertFalse(rule.matches('wire wire wire never'))

    def test_default_required(self):
        with self.assertRaises(NoDefaultRule):
            ScriptedBackend([ScriptedRule('x', contains='y')])

    def test_from_file(self):
        backend = ScriptedBackend.from_file(SCRIPTED_RULES)
        self.assertIn('```json', backend.complete(
            ChatRequest('link to evil.test')))
        self.assertIn('"legitimate"', backend.complete(ChatRequest('hi')))

    def test_selection(self):
        spec = lookup('llama4-scout', environ={})
        self.assertEqual(backend_from_selection(
            'scripted:' + SCRIPTED_RULES, spec).kind, 'scripted')
        remote = backend_from_selection(
            'remote', spec, {'BASE_URL': 'http://llm.local',
                             'MAX_RETRIES': 1})
        self.assertEqual(remote.kind, 'remote')
        self.assertEqual(remote.max_retries, 1)
        with self.assertRaises(ValueError):
            backend_from_selection('carrier-pigeon', spec)
