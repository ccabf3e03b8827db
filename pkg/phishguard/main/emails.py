"""Email ingestion: decode, structure, normalize and validate raw mail.

The pipeline order is decode -> structure -> normalize -> validate; every
``CleanEmail`` leaving this module has a sender containing '@', a
non-empty ASCII body and NFC text fields.
"""
import email
import hashlib
import io
import json
import logging
import os
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from email.header import decode_header

import lxml.html
from lxml.etree import ParserError

from phishguard.main.exceptions import InvalidEmail, MissingSender, NoAtSign


logger = logging.getLogger(__name__)

LEGITIMATE = 'legitimate'
PHISHING = 'phishing'
LABELS = (LEGITIMATE, PHISHING)

CODEC_CHAIN = ('utf-8', 'latin-1', 'iso-8859-1')

ZERO_WIDTH_RE = re.compile('[\u200b\u200c\u200d\u2060\ufeff]')
NON_ASCII_RE = re.compile(r'[^\x00-\x7f]')
# any whitespace except newline, unicode aware
INLINE_SPACE_RE = re.compile(r'[^\S\n]')
WHITESPACE_RE = re.compile(r'\s+')
TRANSPORT_HEADER_RE = re.compile(
    r'^[ \t]*(?:received|return-path|delivered-to|message-id|date|from|to|'
    r'cc|bcc|reply-to|sender|subject|mime-version|content-type|'
    r'content-transfer-encoding|content-disposition|dkim-signature|'
    r'authentication-results|arc-[a-z-]+|x-[a-z0-9-]+):(?:[ \t]|$)')
SIGNATURE_DELIMITER = '-- '
BLOCK_TAGS = ('p', 'div', 'li', 'tr', 'table', 'h1', 'h2', 'h3', 'h4',
              'h5', 'h6', 'blockquote', 'pre')


class RawEmail(object):
    def __init__(self, source_id, data, label=None):
        self.source_id = source_id
        self.data = data
        self.label = label

    @classmethod
    def from_file(cls, path, label=None):
        with open(path, 'rb') as fh:
            return cls(os.path.basename(path), fh.read(), label=label)


class CleanEmail(object):
    """The (subject, sender, body) triple every downstream stage consumes."""

    def __init__(self, id, subject, sender, body, label=None):
        if label is not None and label not in LABELS:
            raise InvalidEmail('unknown label {!r}'.format(label),
                               field='label')
        if not validate_sender(sender or ''):
            raise InvalidEmail('sender has no @', field='sender')
        if not body:
            raise InvalidEmail('body is empty', field='body')
        self.id = str(id)
        self.subject = unicodedata.normalize('NFC', subject or '')
        self.sender = unicodedata.normalize('NFC', sender)
        self.body = unicodedata.normalize('NFC', body)
        self.label = label

    def __eq__(self, other):
        return (isinstance(other, CleanEmail) and
                self.as_dict() == other.as_dict())

    def __ne__(self, other):
        return not self.__eq__(other)

    def __repr__(self):
        return '<CleanEmail {} {!r}>'.format(self.id, self.subject[:40])

    def as_dict(self):
        d = dict(
            id=self.id,
            subject=self.subject,
            sender=self.sender,
            body=self.body,
        )
        if self.label is not None:
            d['label'] = self.label
        return d

    @classmethod
    def create_from_dict(cls, d):
        return cls(
            id=d['id'],
            subject=d.get('subject', ''),
            sender=d.get('sender', ''),
            body=d.get('body', ''),
            label=d.get('label') or None,
        )


class DedupKey(object):
    def __init__(self, digest):
        self.digest = digest

    def __eq__(self, other):
        return isinstance(other, DedupKey) and self.digest == other.digest

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash(self.digest)

    def __repr__(self):
        return '<DedupKey {}>'.format(self.digest)


class IngestionReport(object):
    def __init__(self, input=0, kept=0, dropped_invalid=0, dropped_empty=0,
                 dropped_duplicate=0):
        self.input = input
        self.kept = kept
        self.dropped_invalid = dropped_invalid
        self.dropped_empty = dropped_empty
        self.dropped_duplicate = dropped_duplicate

    def as_dict(self):
        return dict(
            input=self.input,
            kept=self.kept,
            dropped_invalid=self.dropped_invalid,
            dropped_empty=self.dropped_empty,
            dropped_duplicate=self.dropped_duplicate,
        )


def decode_with_fallback(data, charset=None):
    """Decode bytes with the first codec of the chain that succeeds.

    A declared ``charset`` is tried before the chain. Latin-1 maps every
    byte, so this never fails.
    """
    if not data:
        return ''
    codecs = CODEC_CHAIN
    if charset:
        codecs = (charset,) + CODEC_CHAIN
    for codec in codecs:
        try:
            return data.decode(codec)
        except (UnicodeDecodeError, LookupError):
            continue
    return data.decode('latin-1')


def decode_header_value(value):
    """Decode RFC 2047 encoded-words, unfolding continuation lines."""
    if value is None:
        return ''
    value = re.sub(r'\r?\n[ \t]+', ' ', str(value))
    parts = []
    try:
        fragments = decode_header(value)
    except Exception:
        return value.strip()
    for fragment, charset in fragments:
        if isinstance(fragment, bytes):
            if charset in (None, 'unknown-8bit'):
                charset = None
            parts.append(decode_with_fallback(fragment, charset))
        else:
            parts.append(fragment)
    return ''.join(parts).strip()


def html_to_text(html):
    html = re.sub(r'^\s*<\?xml[^>]*\?>', '', html or '')
    if not html.strip():
        return ''
    try:
        doc = lxml.html.fromstring(html)
    except (ParserError, ValueError):
        return ''
    for el in doc.cssselect('script, style'):
        el.drop_tree()
    for br in doc.iter('br'):
        br.tail = '\n' + (br.tail or '')
    for el in doc.iter(*BLOCK_TAGS):
        el.tail = '\n' + (el.tail or '')
        if el is not doc:
            el.text = '\n' + (el.text or '')
    text = doc.text_content().replace('\xa0', ' ')
    lines = [line.strip() for line in text.splitlines()]
    return '\n'.join(line for line in lines if line)


def remove_tracking_artifacts(text):
    return ZERO_WIDTH_RE.sub('', text)


def prune_body(text):
    """Drop quoted reply lines and everything after a signature delimiter."""
    kept = []
    for line in text.splitlines():
        if line.rstrip('\r') == SIGNATURE_DELIMITER:
            break
        if line.startswith('>'):
            continue
        kept.append(line)
    return '\n'.join(kept)


def _is_attachment(part):
    disposition = part.get('Content-Disposition', '') or ''
    return disposition.strip().lower().startswith('attachment')


def _part_text(part):
    cte = (part.get('Content-Transfer-Encoding', '') or '').strip().lower()
    if cte in ('base64', 'quoted-printable'):
        data = part.get_payload(decode=True) or b''
        return decode_with_fallback(data, part.get_content_charset())
    payload = part.get_payload(decode=False)
    if isinstance(payload, bytes):
        return decode_with_fallback(payload, part.get_content_charset())
    return payload or ''


def parse_message(text):
    return email.message_from_string(text)


def extract_features(msg):
    """Return (subject, sender, body) from a parsed message.

    Plain text parts win over HTML; attachments are ignored.
    """
    if msg.get('From') is None:
        raise MissingSender('message has no From header')
    subject = decode_header_value(msg.get('Subject'))
    sender = decode_header_value(msg.get('From'))

    plain, html = [], []
    for part in msg.walk():
        if part.is_multipart() or _is_attachment(part):
            continue
        ctype = part.get_content_type()
        if ctype == 'text/plain':
            plain.append(_part_text(part))
        elif ctype == 'text/html':
            html.append(_part_text(part))

    if plain:
        body = '\n'.join(plain)
    elif html:
        body = html_to_text(html[0])
    else:
        body = ''
    body = prune_body(remove_tracking_artifacts(body.replace('\r\n', '\n')))
    return subject.strip(), sender.strip(), body.strip()


def _strip_transport_headers(text):
    lines = text.split('\n')
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.strip() == '' or TRANSPORT_HEADER_RE.match(line):
            i += 1
            continue
        break
    return '\n'.join(lines[i:])


def normalize_text(t, strip_headers=True):
    """NFC, lowercase, transport-header strip, ASCII only, single spaces.

    Idempotent: the output is a single ASCII line with no leading
    transport header.
    """
    if not t:
        return ''
    t = unicodedata.normalize('NFC', t).lower()
    t = remove_tracking_artifacts(t)
    t = t.replace('\r\n', '\n').replace('\r', '\n')
    t = INLINE_SPACE_RE.sub(' ', t)
    t = NON_ASCII_RE.sub('', t)
    if strip_headers:
        t = _strip_transport_headers(t)
    return WHITESPACE_RE.sub(' ', t).strip()


def validate_sender(sender):
    return '@' in sender


def dedup_key(e):
    h = hashlib.sha256()
    for field in (normalize_text(e.body), e.subject, e.sender):
        h.update(field.encode('utf-8'))
        h.update(b'\x1f')
    return DedupKey(h.hexdigest()[:32])


def anonymize_sender(sender):
    if '@' not in sender:
        raise NoAtSign('sender has no @: {!r}'.format(sender))
    domain = sender.rsplit('@', 1)[1].strip().rstrip('>').strip()
    return 'user@' + domain


def clean_email_from_fields(id, subject, sender, body, label=None):
    """Normalize loose fields (a JSONL record or an API payload)."""
    return CleanEmail(
        id=id,
        subject=normalize_text(subject, strip_headers=False),
        sender=normalize_text(sender, strip_headers=False),
        body=normalize_text(prune_body(remove_tracking_artifacts(body))),
        label=label)


# Pipeline stages, applied in this order to every raw email.

def _stage_decode(raw):
    return decode_with_fallback(raw.data)


def _stage_structure(text):
    return extract_features(parse_message(text))


def _stage_normalize(features):
    subject, sender, body = features
    return (normalize_text(subject, strip_headers=False),
            normalize_text(sender, strip_headers=False),
            normalize_text(body))


def _stage_validate(features):
    return validate_sender(features[1])


PIPELINE_STAGES = (
    ('decode', _stage_decode),
    ('structure', _stage_structure),
    ('normalize', _stage_normalize),
    ('validate', _stage_validate),
)

INVALID = 'invalid'
EMPTY = 'empty'


def _process_one(raw, tracer=None):
    value = raw
    features = None
    for name, stage in PIPELINE_STAGES:
        if tracer is not None:
            tracer(raw.source_id, name)
        try:
            result = stage(value)
        except MissingSender:
            return INVALID
        if name == 'validate':
            if not result:
                return INVALID
        else:
            value = features = result
    subject, sender, body = features
    if not body:
        return EMPTY
    return CleanEmail(raw.source_id, subject, sender, body, label=raw.label)


def preprocess_corpus(raws, workers=1, tracer=None):
    """Run the ingestion pipeline over ``raws``.

    Returns ``(emails, report)``. Survivors keep input order; duplicates
    keep their first occurrence.
    """
    raws = list(raws)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda r: _process_one(r, tracer), raws))
    else:
        outcomes = [_process_one(r, tracer) for r in raws]
    return _collect(raws, outcomes)


def _record_outcome(rec):
    if not isinstance(rec, dict) or rec.get('id') in (None, ''):
        return INVALID
    sender = normalize_text(rec.get('sender') or '', strip_headers=False)
    body = normalize_text(
        prune_body(remove_tracking_artifacts(rec.get('body') or '')))
    if not validate_sender(sender):
        return INVALID
    if not body:
        return EMPTY
    return CleanEmail(
        rec['id'],
        normalize_text(rec.get('subject') or '', strip_headers=False),
        sender, body, label=rec.get('label') or None)


def preprocess_records(records):
    """Ingest already-structured JSONL records (no decode/structure).

    A record that is not an object, lacks an id or carries an unknown
    label is dropped as invalid.
    """
    records = list(records)
    outcomes = []
    for pos, rec in enumerate(records):
        try:
            outcomes.append(_record_outcome(rec))
        except (InvalidEmail, KeyError, TypeError, AttributeError) as e:
            logger.info('dropped invalid record position=%d reason=%r',
                        pos, e)
            outcomes.append(INVALID)
    return _collect(records, outcomes)


def _collect(raws, outcomes):
    report = IngestionReport(input=len(raws))
    seen = set()
    kept = []
    for outcome in outcomes:
        if outcome == INVALID:
            report.dropped_invalid += 1
        elif outcome == EMPTY:
            report.dropped_empty += 1
        else:
            key = dedup_key(outcome)
            if key in seen:
                report.dropped_duplicate += 1
                logger.info('dropped duplicate id=%s', outcome.id)
                continue
            seen.add(key)
            kept.append(outcome)
    report.kept = len(kept)
    logger.info('ingested input=%d kept=%d invalid=%d empty=%d duplicate=%d',
                report.input, report.kept, report.dropped_invalid,
                report.dropped_empty, report.dropped_duplicate)
    return kept, report


def load_eml_directory(path, label=None):
    names = sorted(n for n in os.listdir(path) if n.lower().endswith('.eml'))
    return [RawEmail.from_file(os.path.join(path, n), label=label)
            for n in names]


def read_jsonl(path):
    records = []
    with io.open(path, encoding='utf-8') as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def read_corpus(path):
    return [CleanEmail.create_from_dict(d) for d in read_jsonl(path)]


def write_corpus(path, emails):
    with io.open(path, 'w', encoding='utf-8') as fh:
        for e in emails:
            fh.write(json.dumps(e.as_dict()) + '\n')
