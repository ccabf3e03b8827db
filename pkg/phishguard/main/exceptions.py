class PhishGuardError(Exception):
    """Base class for every error raised by the classification engine.

    Subclasses carry structured attributes; ``as_dict`` renders them into
    the JSON error document used by the CLI and the HTTP service.
    """
    code = 'phishguard_error'

    def __init__(self, message='', **attrs):
        super(PhishGuardError, self).__init__(message)
        self.message = message
        self.attrs = attrs
        for key, value in attrs.items():
            setattr(self, key, value)

    def as_dict(self):
        d = {'error': self.code, 'message': self.message}
        for key, value in sorted(self.attrs.items()):
            if key == 'raw' or key == 'cause':
                continue
            d[key] = value
        return d


# email-core

class EmailError(PhishGuardError):
    code = 'email_error'


class MissingSender(EmailError):
    code = 'missing_sender'


class NoAtSign(EmailError):
    code = 'no_at_sign'


class InvalidEmail(EmailError):
    code = 'invalid_email'


# embedding

class EmbeddingError(PhishGuardError):
    code = 'embedding_error'


class ProviderUnavailable(EmbeddingError):
    code = 'provider_unavailable'


class DimensionMismatch(EmbeddingError):
    code = 'dimension_mismatch'


class ZeroVector(EmbeddingError):
    code = 'zero_vector'


# vector-index

class VectorIndexError(PhishGuardError):
    code = 'vector_index_error'


class DuplicateId(VectorIndexError):
    code = 'duplicate_id'


class NotNormalized(VectorIndexError):
    code = 'not_normalized'


class IndexFrozen(VectorIndexError):
    code = 'index_frozen'


class FormatVersionMismatch(VectorIndexError):
    code = 'format_version_mismatch'


class CorruptFile(VectorIndexError):
    code = 'corrupt_file'


# threat-intel

class ThreatIntelError(PhishGuardError):
    code = 'threat_intel_error'


class RateLimited(ThreatIntelError):
    code = 'rate_limited'


class NotFound(ThreatIntelError):
    code = 'not_found'


class NetworkError(ThreatIntelError):
    code = 'network_error'


# prompt-verdict

class VerdictError(PhishGuardError):
    code = 'verdict_error'


class BudgetTooSmall(VerdictError):
    code = 'budget_too_small'


class NoJsonFound(VerdictError):
    code = 'no_json_found'


class SchemaViolation(VerdictError):
    code = 'schema_violation'

    def __init__(self, field, reason, raw=''):
        super(SchemaViolation, self).__init__(
            '{}: {}'.format(field, reason),
            field=field, reason=reason, raw=raw)


# llm-gateway

class LlmError(PhishGuardError):
    code = 'llm_error'


class UnknownModel(LlmError):
    code = 'unknown_model'


class AuthFailed(LlmError):
    code = 'auth_failed'


class Exhausted(LlmError):
    code = 'exhausted'


class ContextOverflow(LlmError):
    code = 'context_overflow'


class NoDefaultRule(LlmError):
    code = 'no_default_rule'


# pipeline

class PipelineError(PhishGuardError):
    code = 'pipeline_error'


class EmbeddingFailed(PipelineError):
    code = 'embedding_failed'


class LlmExhausted(PipelineError):
    code = 'llm_exhausted'


# eval-harness

class EvaluationError(PhishGuardError):
    code = 'evaluation_error'


class DegenerateCorpus(EvaluationError):
    code = 'degenerate_corpus'


class LeakageDetected(EvaluationError):
    code = 'leakage_detected'
