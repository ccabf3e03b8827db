import json
import logging

from django.db import DatabaseError
from django.views.generic.base import View

from phishguard.main.emails import clean_email_from_fields
from phishguard.main.exceptions import EmailError, PhishGuardError
from phishguard.main.mixins import JSONResponseMixin
from phishguard.main.models import ClassificationLog
from phishguard.main.pipeline import ClassifyOptions, get_service_engine


logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ('subject', 'sender', 'body')
TOGGLE_FIELDS = (('rag', 'rag'), ('threat_intel', 'threat'))


class ClassifyView(JSONResponseMixin, View):
    http_method_names = ['post']

    def bad_request(self, field, reason):
        return self.render_to_json_response(
            {'error': 'invalid_request', 'field': field, 'message': reason},
            status=400)

    def request_options(self, payload, defaults):
        """Per-request overrides of the engine's options, or a 400."""
        opts = defaults.as_dict()
        k = payload.get('k', opts['k'])
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            return None, self.bad_request('k', 'must be an integer >= 1')
        opts['k'] = k
        for field, key in TOGGLE_FIELDS:
            value = payload.get(field, opts[key])
            if not isinstance(value, bool):
                return None, self.bad_request(field, 'must be a boolean')
            opts[key] = value
        return ClassifyOptions(**opts), None

    def post(self, request):
        try:
            return self.classify(request)
        except Exception:
            logger.exception('unhandled error in classify')
            return self.render_to_json_response(
                {'error': 'internal_error',
                 'message': 'unexpected server error'}, status=500)

    def classify(self, request):
        try:
            payload = json.loads(request.body.decode('utf-8'))
        except (ValueError, UnicodeDecodeError):
            return self.bad_request(None, 'body is not valid JSON')
        if not isinstance(payload, dict):
            return self.bad_request(None, 'body must be a JSON object')
        for field in REQUIRED_FIELDS:
            if not isinstance(payload.get(field), str):
                return self.bad_request(field, 'missing or not a string')
        if not isinstance(payload.get('id', ''), str):
            return self.bad_request('id', 'must be a string')

        engine = get_service_engine()
        options, error = self.request_options(payload, engine.options)
        if error is not None:
            return error

        try:
            e = clean_email_from_fields(
                payload.get('id') or 'request', payload['subject'],
                payload['sender'], payload['body'])
        except EmailError as err:
            return self.bad_request(getattr(err, 'field', 'sender'),
                                    err.message)

        try:
            result = engine.classify(e, options)
        except PhishGuardError as err:
            logger.error('classification failed email=%s error=%s',
                         e.id, err.code)
            return self.render_to_json_response(err.as_dict(), status=502)

        try:
            ClassificationLog.objects.record(result)
        except DatabaseError as err:
            logger.warning('classification log not written email=%s: %s',
                           e.id, err)
        return self.render_to_json_response(result.as_dict())


class HealthView(JSONResponseMixin, View):
    http_method_names = ['get']

    def get(self, request):
        engine = get_service_engine()
        return self.render_to_json_response({
            'index_size': len(engine.index),
            'model_key': engine.model_spec.key,
            'backend': engine.backend.kind,
            'rag': engine.options.rag,
            'threat_intel': engine.options.threat,
        })
