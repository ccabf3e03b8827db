"""Classification prompt assembly and verdict parsing."""
import json
import logging
import pkgutil
import re
from functools import lru_cache

from phishguard.main.emails import LEGITIMATE, PHISHING
from phishguard.main.exceptions import BudgetTooSmall, NoJsonFound, \
    SchemaViolation
from phishguard.main.llm import SYSTEM_MESSAGE


logger = logging.getLogger(__name__)

TEMPLATE_VERSION = 'v1'
BLOCKS = ('role', 'email', 'context', 'threat', 'output_spec')

NONE_AVAILABLE = 'none available'
NO_HISTORY = 'no historical emails available'
EXCERPT_CHARS = 500
DEFAULT_BUDGET_CHARS = 24000
CHARS_PER_TOKEN = 4

DECISIONS = (LEGITIMATE, PHISHING)
RISKS = ('low', 'medium', 'high')
SCORE_RANGE = range(0, 11)

SLOT_RE = re.compile(r'\{(email|context|threat)\}')


@lru_cache(maxsize=4)
def get_templates(version=TEMPLATE_VERSION):
    templates = {}
    for name in BLOCKS:
        data = pkgutil.get_data(
            'phishguard.main',
            'prompt_templates/{}/{}.txt'.format(version, name))
        templates[name] = data.decode('utf-8')
    return templates


def _fill(template, **slots):
    # single pass, so slot-like text inside an email is never expanded
    return SLOT_RE.sub(lambda m: slots.get(m.group(1), ''), template)


class PromptBundle(object):
    def __init__(self, role_block, email_block, context_block, threat_block,
                 output_spec_block, system_message=SYSTEM_MESSAGE):
        self.role_block = role_block
        self.email_block = email_block
        self.context_block = context_block
        self.threat_block = threat_block
        self.output_spec_block = output_spec_block
        self.system_message = system_message

    @property
    def rendered(self):
        return ''.join((self.role_block, self.email_block,
                        self.context_block, self.threat_block,
                        self.output_spec_block))

    def __len__(self):
        return len(self.rendered)


def render_email(e, body=None):
    return 'Subject: {}\nSender: {}\nBody:\n{}'.format(
        e.subject, e.sender, e.body if body is None else body)


def render_context(context, excerpts, empty=NONE_AVAILABLE):
    if not context:
        return empty
    entries = []
    for rank, (e, excerpt) in enumerate(zip(context, excerpts), 1):
        entries.append('[{}] subject: {} | sender: {}\n    excerpt: {}'.format(
            rank, e.subject, e.sender, excerpt))
    return '\n'.join(entries)


def budget_for_model(spec, max_output_tokens, default=DEFAULT_BUDGET_CHARS):
    window_chars = (spec.context_window_tokens - max_output_tokens) * \
        CHARS_PER_TOKEN
    return min(default, window_chars)


def build_prompt(e, context, threat, budget=DEFAULT_BUDGET_CHARS,
                 excerpt_chars=EXCERPT_CHARS, empty_context=NONE_AVAILABLE,
                 system_message=SYSTEM_MESSAGE, version=TEMPLATE_VERSION):
    """Render role, email, context, threat and output-spec blocks in order.

    Over budget, context excerpts shrink first (longest first), then the
    tail of the query body. Role and output spec are never touched.
    """
    t = get_templates(version)
    threat = threat or NONE_AVAILABLE
    context = list(context or [])
    fixed = (len(t['role']) + len(t['output_spec']) +
             len(_fill(t['email'])) + len(_fill(t['context'])) +
             len(_fill(t['threat'])))
    if fixed > budget:
        raise BudgetTooSmall(
            'fixed prompt blocks need {} chars, budget is {}'.format(
                fixed, budget), required=fixed, budget=budget)

    excerpts = [c.body[:excerpt_chars] for c in context]
    body = e.body

    def assemble():
        return PromptBundle(
            role_block=t['role'],
            email_block=_fill(t['email'], email=render_email(e, body)),
            context_block=_fill(t['context'], context=render_context(
                context, excerpts, empty_context)),
            threat_block=_fill(t['threat'], threat=threat),
            output_spec_block=t['output_spec'],
            system_message=system_message)

    bundle = assemble()
    excess = len(bundle) - budget
    if excess <= 0:
        return bundle

    while excess > 0 and any(excerpts):
        lengths = [len(x) for x in excerpts]
        longest = max(lengths)
        i = lengths.index(longest)
        second = max([n for j, n in enumerate(lengths) if j != i] or [0])
        cut = min(excess, max(longest - second, 1))
        excerpts[i] = excerpts[i][:longest - cut]
        excess -= cut
    if excess > 0:
        cut = min(excess, len(body))
        body = body[:len(body) - cut]
        excess -= cut
    if excess > 0:
        raise BudgetTooSmall(
            'prompt exceeds budget by {} chars after truncation'.format(
                excess), budget=budget)
    logger.info('prompt truncated to budget=%d email=%s', budget, e.id)
    return assemble()


class Verdict(object):
    def __init__(self, classification_decision, phishing_score, risk,
                 social_engineering_elements=None, recommended_actions=None,
                 brief_reason=''):
        self.classification_decision = classification_decision
        self.phishing_score = phishing_score
        self.risk = risk
        self.social_engineering_elements = list(
            social_engineering_elements or [])
        self.recommended_actions = list(recommended_actions or [])
        self.brief_reason = brief_reason
        _validate(self.as_dict())

    def __eq__(self, other):
        return isinstance(other, Verdict) and \
            self.as_dict() == other.as_dict()

    def __ne__(self, other):
        return not self.__eq__(other)

    def __repr__(self):
        return '<Verdict {} {}/10 {}>'.format(
            self.classification_decision, self.phishing_score, self.risk)

    @property
    def is_phishing(self):
        return self.classification_decision == PHISHING

    def as_dict(self):
        return dict(
            classification_decision=self.classification_decision,
            phishing_score=self.phishing_score,
            risk=self.risk,
            social_engineering_elements=self.social_engineering_elements,
            recommended_actions=self.recommended_actions,
            brief_reason=self.brief_reason,
        )

    def render(self):
        return json.dumps(self.as_dict())

    @classmethod
    def create_from_dict(cls, d):
        return cls(**_validate(d))


FALLBACK_REASON = 'model output unparseable — failing closed'


def fallback_verdict():
    return Verdict(PHISHING, 5, 'medium', [], [], FALLBACK_REASON)


def _coerce_score(value, raw):
    if isinstance(value, bool):
        raise SchemaViolation('phishing_score', 'not a number', raw)
    if isinstance(value, str):
        text = value.strip()
        try:
            value = int(text)
        except ValueError:
            try:
                value = float(text)
            except ValueError:
                raise SchemaViolation('phishing_score', 'not a number', raw)
    if isinstance(value, float):
        if not value.is_integer():
            raise SchemaViolation('phishing_score', 'not an integer', raw)
        value = int(value)
    if not isinstance(value, int):
        raise SchemaViolation('phishing_score', 'not a number', raw)
    if value not in SCORE_RANGE:
        raise SchemaViolation('phishing_score', 'out of range', raw)
    return value


def _enum(d, field, allowed, raw):
    value = d[field]
    if not isinstance(value, str) or value.strip().lower() not in allowed:
        raise SchemaViolation(
            field, 'must be one of {}'.format(', '.join(allowed)), raw)
    return value.strip().lower()


def _string_list(d, field, raw):
    value = d[field]
    if not isinstance(value, list) or \
            not all(isinstance(x, str) for x in value):
        raise SchemaViolation(field, 'must be a list of strings', raw)
    return value


def _validate(d, raw=''):
    for field in ('classification_decision', 'phishing_score', 'risk',
                  'social_engineering_elements', 'recommended_actions',
                  'brief_reason'):
        if field not in d:
            raise SchemaViolation(field, 'missing', raw)
    reason = d['brief_reason']
    if not isinstance(reason, str) or not reason.strip():
        raise SchemaViolation('brief_reason', 'must be a non-empty string',
                              raw)
    return dict(
        classification_decision=_enum(d, 'classification_decision',
                                      DECISIONS, raw),
        phishing_score=_coerce_score(d['phishing_score'], raw),
        risk=_enum(d, 'risk', RISKS, raw),
        social_engineering_elements=_string_list(
            d, 'social_engineering_elements', raw),
        recommended_actions=_string_list(d, 'recommended_actions', raw),
        brief_reason=reason,
    )


def _first_json_object(raw):
    """First object carrying a decision, else the first object found."""
    decoder = json.JSONDecoder()
    first = None
    pos = raw.find('{')
    while pos != -1:
        try:
            obj, end = decoder.raw_decode(raw, pos)
        except ValueError:
            pos = raw.find('{', pos + 1)
            continue
        if isinstance(obj, dict):
            if 'classification_decision' in obj:
                return obj
            if first is None:
                first = obj
        pos = raw.find('{', end)
    if first is None:
        raise NoJsonFound('no JSON object in model output', raw=raw)
    return first


def parse_verdict(raw):
    """Extract and validate the first JSON verdict object in ``raw``."""
    raw = raw or ''
    try:
        d = _first_json_object(raw)
        return Verdict(**_validate(d, raw))
    except (NoJsonFound, SchemaViolation) as e:
        logger.warning('unparseable verdict error=%s detail=%s raw=%r',
                       e.code, e.message, raw[:2000])
        raise


def consistency_check(v):
    warnings = []
    if v.classification_decision == PHISHING and v.phishing_score <= 3:
        warnings.append('decision is phishing but phishing_score is {}'.format(
            v.phishing_score))
    if v.classification_decision == LEGITIMATE and v.phishing_score >= 7:
        warnings.append(
            'decision is legitimate but phishing_score is {}'.format(
                v.phishing_score))
    if v.risk == 'high' and v.classification_decision == LEGITIMATE:
        warnings.append('decision is legitimate but risk is high')
    return warnings
