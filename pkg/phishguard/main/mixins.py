import json

from django.http.response import HttpResponse
from django.utils.decorators import method_decorator
from django.views.decorators.csrf import csrf_exempt


class JSONResponseMixin(object):
    @method_decorator(csrf_exempt)
    def dispatch(self, *args, **kwargs):
        return super(JSONResponseMixin, self).dispatch(*args, **kwargs)

    def render_to_json_response(self, context, **response_kwargs):
        """
        Returns a JSON response, transforming 'context' to make the payload.
        The body is serialized before the response is built, so a
        serialization failure never leaves a partial body behind.
        """
        return HttpResponse(json.dumps(context),
                            content_type='application/json',
                            **response_kwargs)
