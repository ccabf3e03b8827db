import logging
import random
import time


logger = logging.getLogger(__name__)


class RetryableError(Exception):
    """Raised by an attempt that may succeed if repeated."""

    def __init__(self, reason, retry_after=None):
        super(RetryableError, self).__init__(reason)
        self.reason = reason
        self.retry_after = retry_after


def backoff_delay(attempt, base_delay, rng=random):
    # exponential with full jitter on top
    delay = base_delay * (2 ** attempt)
    return delay + rng.uniform(0, base_delay)


def call_with_retries(fn, max_retries=3, base_delay=1.0, sleep=time.sleep,
                      label='call'):
    """Run ``fn()`` retrying ``RetryableError`` up to ``max_retries`` times.

    Returns ``(result, attempts)``. When retries are spent the last
    ``RetryableError`` is re-raised with ``attempts`` set on it.
    """
    attempt = 0
    while True:
        attempt += 1
        try:
            return fn(), attempt
        except RetryableError as e:
            if attempt > max_retries:
                e.attempts = attempt
                raise
            delay = backoff_delay(attempt - 1, base_delay)
            if e.retry_after is not None:
                delay = max(delay, e.retry_after)
            logger.warning('%s attempt=%d failed reason=%s retry_in=%.2fs',
                           label, attempt, e.reason, delay)
            sleep(delay)
