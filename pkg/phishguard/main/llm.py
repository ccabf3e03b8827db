"""Chat-completion gateway: model registry, remote and scripted backends."""
import io
import json
import logging
import os
import threading
import time

import requests

from phishguard.main.exceptions import AuthFailed, ContextOverflow, \
    Exhausted, NoDefaultRule, UnknownModel
from phishguard.main.retry import RetryableError, call_with_retries


logger = logging.getLogger(__name__)

SYSTEM_MESSAGE = (
    'You are a cybersecurity expert specialized in phishing detection. '
    'Always respond with a single JSON object matching the requested '
    'schema.')

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_OUTPUT_TOKENS = 1024
DEFAULT_MAX_IN_FLIGHT = 2
DEFAULT_MAX_RETRIES = 3
CHARS_PER_TOKEN = 4

REMOTE = 'remote'
SCRIPTED = 'scripted'


class ModelSpec(object):
    def __init__(self, key, provider_label, parameter_count,
                 context_window_tokens, endpoint_model_id):
        if context_window_tokens <= 0:
            raise ValueError('context window must be positive')
        self.key = key
        self.provider_label = provider_label
        self.parameter_count = parameter_count
        self.context_window_tokens = context_window_tokens
        self.endpoint_model_id = endpoint_model_id

    def __repr__(self):
        return '<ModelSpec {}>'.format(self.key)

    def as_dict(self):
        return dict(
            key=self.key,
            provider_label=self.provider_label,
            parameter_count=self.parameter_count,
            context_window_tokens=self.context_window_tokens,
            endpoint_model_id=self.endpoint_model_id,
        )


def registry_default():
    return [
        ModelSpec('llama4-scout', 'Meta', '17B', 131000,
                  'meta-llama/llama-4-scout-17b-16e-instruct'),
        ModelSpec('deepseek-r1', 'DeepSeek', '70B', 128000,
                  'deepseek-r1-distill-llama-70b'),
        ModelSpec('mistral-saba', 'Mistral', '24B', 32000,
                  'mistral-saba-24b'),
        ModelSpec('gemma2-9b', 'Google', '9B', 8000, 'gemma2-9b-it'),
    ]


def _env_override(key):
    return 'LLM_MODEL_ID_' + key.upper().replace('-', '_')


def lookup(key, registry=None, environ=None):
    environ = os.environ if environ is None else environ
    for spec in registry or registry_default():
        if spec.key == key:
            override = environ.get(_env_override(key))
            if override:
                spec.endpoint_model_id = override
            return spec
    raise UnknownModel('unknown model {!r}'.format(key), key=key)


class ChatRequest(object):
    def __init__(self, user_message, system_message=SYSTEM_MESSAGE,
                 temperature=DEFAULT_TEMPERATURE,
                 max_output_tokens=DEFAULT_MAX_OUTPUT_TOKENS):
        if not user_message or not system_message:
            raise ValueError('chat messages must be non-empty')
        self.system_message = system_message
        self.user_message = user_message
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens

    def estimated_tokens(self):
        chars = len(self.system_message) + len(self.user_message)
        return chars // CHARS_PER_TOKEN + self.max_output_tokens

    def messages(self):
        return [
            {'role': 'system', 'content': self.system_message},
            {'role': 'user', 'content': self.user_message},
        ]


class Completion(object):
    def __init__(self, text, attempts=1, latency=0.0, usage=None):
        self.text = text
        self.attempts = attempts
        self.latency = latency
        self.usage = usage or {}


class RemoteBackend(object):
    """OpenAI-compatible ``POST /chat/completions`` client."""
    kind = REMOTE

    def __init__(self, base_url, api_key, model_spec,
                 max_in_flight=DEFAULT_MAX_IN_FLIGHT,
                 max_retries=DEFAULT_MAX_RETRIES, timeout=60.0,
                 session=None, sleep=None):
        self.base_url = base_url.rstrip('/')
        self.api_key = api_key
        self.model_spec = model_spec
        self.max_retries = max_retries
        self.timeout = timeout
        self.session = session or requests.Session()
        self.sleep = sleep or time.sleep
        self._in_flight = threading.BoundedSemaphore(max_in_flight)

    def _post(self, req):
        try:
            resp = self.session.post(
                self.base_url + '/chat/completions',
                json={
                    'model': self.model_spec.endpoint_model_id,
                    'messages': req.messages(),
                    'temperature': req.temperature,
                    'max_tokens': req.max_output_tokens,
                },
                headers={'Authorization': 'Bearer {}'.format(self.api_key),
                         'Content-Type': 'application/json'},
                timeout=self.timeout)
        except requests.RequestException as e:
            raise RetryableError(str(e))
        if resp.status_code in (401, 403):
            raise AuthFailed('endpoint rejected credentials',
                             status=resp.status_code)
        if resp.status_code == 429 or resp.status_code >= 500:
            retry_after = resp.headers.get('Retry-After')
            try:
                retry_after = float(retry_after) if retry_after else None
            except ValueError:
                retry_after = None
            raise RetryableError('http {}'.format(resp.status_code),
                                 retry_after=retry_after)
        if resp.status_code >= 400:
            raise Exhausted('http {}'.format(resp.status_code),
                            status=resp.status_code, attempts=1)
        try:
            body = resp.json()
            text = body['choices'][0]['message']['content']
        except (ValueError, KeyError, IndexError, TypeError):
            raise RetryableError('malformed completion response')
        return text, body.get('usage') or {}

    def _attempt(self, req):
        # the slot is held per attempt, never across a backoff sleep
        with self._in_flight:
            return self._post(req)

    def complete_with_meta(self, req):
        window = self.model_spec.context_window_tokens
        if req.estimated_tokens() > window:
            raise ContextOverflow(
                'request needs ~{} tokens, {} window is {}'.format(
                    req.estimated_tokens(), self.model_spec.key, window),
                model=self.model_spec.key, window=window)
        started = time.monotonic()
        try:
            (text, usage), attempts = call_with_retries(
                lambda: self._attempt(req), max_retries=self.max_retries,
                sleep=self.sleep, label='llm')
        except RetryableError as e:
            raise Exhausted(
                'completion failed after {} attempts: {}'.format(
                    e.attempts, e.reason),
                attempts=e.attempts, model=self.model_spec.key)
        latency = time.monotonic() - started
        logger.info('completion model=%s attempts=%d latency=%.3fs '
                    'prompt_tokens=%s completion_tokens=%s',
                    self.model_spec.key, attempts, latency,
                    usage.get('prompt_tokens'),
                    usage.get('completion_tokens'))
        return Completion(text, attempts, latency, usage)

    def complete(self, req):
        return self.complete_with_meta(req).text


class ScriptedRule(object):
    """``when`` holds any of ``contains``, ``absent`` and ``count``."""

    def __init__(self, response, contains=None, absent=None, count=None,
                 default=False):
        self.response = response
        self.contains = contains
        self.absent = list(absent or [])
        self.count = count
        self.default = default

    def matches(self, text):
        if self.default:
            return True
        if self.contains is not None and self.contains not in text:
            return False
        if any(a in text for a in self.absent):
            return False
        if self.count is not None and \
                text.count(self.count['text']) < self.count['at_least']:
            return False
        return True

    def render(self):
        if isinstance(self.response, str):
            return self.response
        return json.dumps(self.response)

    @classmethod
    def create_from_dict(cls, d):
        when = d.get('when') or {}
        return cls(d['response'], contains=when.get('contains'),
                   absent=when.get('absent'), count=when.get('count'),
                   default=bool(d.get('default')))


class ScriptedBackend(object):
    """Deterministic rule table; the first matching rule answers."""
    kind = SCRIPTED

    def __init__(self, rules, source=None):
        self.rules = list(rules)
        self.source = source
        if not any(r.default for r in self.rules):
            raise NoDefaultRule('scripted backend needs a default rule')
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path):
        with io.open(path, encoding='utf-8') as fh:
            data = json.load(fh)
        return cls([ScriptedRule.create_from_dict(r) for r in data['rules']],
                   source=path)

    def complete_with_meta(self, req):
        with self._lock:
            self.calls += 1
        for rule in self.rules:
            if rule.matches(req.user_message):
                return Completion(rule.render())
        # unreachable: the default rule always matches
        raise NoDefaultRule('no rule matched')

    def complete(self, req):
        return self.complete_with_meta(req).text


def scripted_backend(rules):
    return ScriptedBackend([
        r if isinstance(r, ScriptedRule) else ScriptedRule.create_from_dict(r)
        for r in rules])


def complete(backend, req):
    return backend.complete(req)


def backend_from_selection(selection, model_spec, config=None):
    """``remote`` or ``scripted:PATH``."""
    config = config or {}
    if selection.startswith(SCRIPTED + ':'):
        return ScriptedBackend.from_file(selection[len(SCRIPTED) + 1:])
    if selection == REMOTE:
        return RemoteBackend(
            config.get('BASE_URL', ''), config.get('API_KEY', ''),
            model_spec,
            max_in_flight=int(config.get('MAX_IN_FLIGHT',
                                         DEFAULT_MAX_IN_FLIGHT)),
            max_retries=int(config.get('MAX_RETRIES', DEFAULT_MAX_RETRIES)),
            timeout=float(config.get('TIMEOUT', 60.0)))
    raise ValueError('unknown backend {!r}'.format(selection))
