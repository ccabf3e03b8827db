from functools import lru_cache

from django.conf import settings
from statsd import StatsClient


class NullStatsClient(object):
    def timing(self, stat, delta, rate=1):
        pass

    def incr(self, stat, count=1, rate=1):
        pass


@lru_cache(maxsize=1)
def get_stats_client():
    host = getattr(settings, 'STATSD_HOST', None)
    if not host:
        return NullStatsClient()
    return StatsClient(host=host,
                       port=getattr(settings, 'STATSD_PORT', 8125),
                       prefix=getattr(settings, 'STATSD_PREFIX', 'phishguard'))
