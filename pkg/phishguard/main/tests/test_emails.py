# -*- coding: utf-8 -*-
import json
import os
import random

from django.test import TestCase

from phishguard.main.emails import CleanEmail, RawEmail, \
    anonymize_sender, clean_email_from_fields, decode_header_value, \
    decode_with_fallback, dedup_key, extract_features, html_to_text, \
    load_eml_directory, normalize_text, parse_message, preprocess_corpus, \
    preprocess_records, prune_body, validate_sender
from phishguard.main.exceptions import InvalidEmail, MissingSender, NoAtSign
from phishguard.main.tests.factories import CleanEmailFactory
from phishguard.main.tests.synthetic import FIXTURES


EML_DIR = os.path.join(FIXTURES, 'eml')
GOLDEN = os.path.join(FIXTURES, 'golden_corpus.jsonl')

MALFORMED = b'Subject: nobody sent this\n\nthere is no from header here\n'


def golden_records():
    with open(GOLDEN) as fh:
        return [json.loads(line) for line in fh if line.strip()]


class NormalizeTextTest(TestCase):
    def test_case_and_whitespace(self):
        self.assertEqual(normalize_text('Hello   World\r\n'), 'hello world')

    def test_non_ascii_dropped_after_nfc(self):
        self.assertEqual(normalize_text(u'Café ☕ open'), 'caf open')
        # decomposed e + combining acute folds to é first, then drops
        self.assertEqual(normalize_text(u'Cafe\u0301 open'), 'caf open')

    def test_zero_width_removed(self):
        self.assertEqual(normalize_text(u'pay\u200bpal'), 'paypal')

    def test_leading_transport_headers_stripped(self):
        text = 'Received: by mx.example\nX-Spam: no\n\nHello there\nDate: kept'
        self.assertEqual(normalize_text(text), 'hello there date: kept')

    def test_headers_kept_when_not_stripping(self):
        self.assertEqual(normalize_text('From: Alice', strip_headers=False),
                         'from: alice')

    def test_empty(self):
        self.assertEqual(normalize_text(''), '')
        self.assertEqual(normalize_text(None), '')

    def test_idempotent_and_ascii(self):
        rng = random.Random(7)
        pool = ['a', 'Z', ' ', '  ', '\t', '\n', '\r\n', 'From: ', 'x-id: ',
                u'\u00e9', u'e\u0301', u'\u2615', u'\u200b', u'\u00a0',
                u'\u2028',
                'Subject:', '3', '.', ':', u'\u0130', u'\u212a']
        for _ in range(1000):
            t = ''.join(rng.choice(pool)
                        for _ in range(rng.randint(0, 30)))
            once = normalize_text(t)
            self.assertEqual(normalize_text(once), once, repr(t))
            self.assertTrue(all(ord(c) < 128 for c in once))


class ValidateSenderTest(TestCase):
    def test_truth_table(self):
        cases = [
            ('alice@example.com', True),
            ('no-reply example.com', False),
            ('@', True),
            ('', False),
            ('Alice <alice@example.com>', True),
            ('alice(at)example.com', False),
        ]
        for sender, expected in cases:
            self.assertEqual(validate_sender(sender), expected, sender)


class AnonymizeSenderTest(TestCase):
    def test_local_part_replaced(self):
        self.assertEqual(anonymize_sender('alice.smith@uni.edu'),
                         'user@uni.edu')

    def test_fixpoint(self):
        self.assertEqual(anonymize_sender('user@uni.edu'), 'user@uni.edu')

    def test_display_name(self):
        self.assertEqual(anonymize_sender('Alice <alice@uni.edu>'),
                         'user@uni.edu')

    def test_no_at_sign(self):
        with self.assertRaises(NoAtSign):
            anonymize_sender('plainstring')


class DedupKeyTest(TestCase):
    def test_identical_emails(self):
        a = CleanEmailFactory(id='a', body='same body')
        b = CleanEmailFactory(id='b', body='same body',
                              subject=a.subject)
        self.assertEqual(dedup_key(a), dedup_key(b))

    def test_sender_in_key(self):
        a = CleanEmailFactory(body='same body', subject='s')
        b = CleanEmailFactory(body='same body', subject='s',
                              sender='mallory@evil.test')
        self.assertNotEqual(dedup_key(a), dedup_key(b))

    def test_whitespace_runs(self):
        a = CleanEmailFactory(body='pay  the\tinvoice', subject='s')
        b = CleanEmailFactory(body='pay the invoice', subject='s')
        self.assertEqual(dedup_key(a), dedup_key(b))

    def test_digest_is_128_bits(self):
        self.assertEqual(len(dedup_key(CleanEmailFactory()).digest), 32)


class CleanEmailTest(TestCase):
    def test_invalid_sender(self):
        with self.assertRaises(InvalidEmail) as cm:
            CleanEmail('x', 'subject', 'noatsign', 'body')
        self.assertEqual(cm.exception.field, 'sender')

    def test_empty_body(self):
        with self.assertRaises(InvalidEmail) as cm:
            CleanEmail('x', 'subject', 'a@b.co', '')
        self.assertEqual(cm.exception.field, 'body')

    def test_unknown_label(self):
        with self.assertRaises(InvalidEmail):
            CleanEmail('x', 'subject', 'a@b.co', 'body', label='spam')

    def test_dict_round_trip(self):
        e = CleanEmailFactory()
        self.assertEqual(CleanEmail.create_from_dict(e.as_dict()), e)

    def test_from_fields(self):
        e = clean_email_from_fields('req', 'URGENT: Pay', 'Bob <B@X.io>',
                                    'Pay  now\n> quoted\n-- \nsig')
        self.assertEqual(e.subject, 'urgent: pay')
        self.assertEqual(e.sender, 'bob <b@x.io>')
        self.assertEqual(e.body, 'pay now')


class ExtractFeaturesTest(TestCase):
    def test_plain(self):
        msg = parse_message('Subject: Hi\nFrom: a@b.co\n\nhello\n')
        self.assertEqual(extract_features(msg), ('Hi', 'a@b.co', 'hello'))

    def test_html_only(self):
        msg = parse_message(
            'From: a@b.co\nContent-Type: text/html\n\n<p>Pay&nbsp;now</p>\n')
        self.assertEqual(extract_features(msg)[2], 'Pay now')

    def test_missing_subject(self):
        msg = parse_message('From: a@b.co\n\nhello\n')
        self.assertEqual(extract_features(msg)[0], '')

    def test_missing_sender(self):
        with self.assertRaises(MissingSender):
            extract_features(parse_message('Subject: Hi\n\nhello\n'))


class HelpersTest(TestCase):
    def test_decode_with_fallback(self):
        self.assertEqual(decode_with_fallback(b'caf\xe9'), u'café')
        self.assertEqual(decode_with_fallback(u'café'.encode('utf-8')),
                         u'café')
        self.assertEqual(decode_with_fallback(b'x', 'no-such-codec'), 'x')
        self.assertEqual(decode_with_fallback(b''), '')

    def test_decode_header_value(self):
        self.assertEqual(decode_header_value('=?utf-8?q?caf=C3=A9?='),
                         u'café')
        self.assertEqual(decode_header_value(None), '')

    def test_html_to_text(self):
        html = ('<html><head><style>p {color: red}</style></head><body>'
                '<script>alert(1)</script><p>one</p>two<br>three</body>'
                '</html>')
        self.assertEqual(html_to_text(html), 'one\ntwo\nthree')
        self.assertEqual(html_to_text(''), '')

    def test_prune_body(self):
        text = 'keep this\n> quoted\nand this\n-- \nsignature\nmore'
        self.assertEqual(prune_body(text), 'keep this\nand this')

    def test_prune_body_keeps_bare_dashes(self):
        text = 'run it like this\n--\nmycmd --verbose\n-- \nsig'
        self.assertEqual(prune_body(text),
                         'run it like this\n--\nmycmd --verbose')


class PreprocessCorpusTest(TestCase):
    def test_golden_fixtures(self):
        emails, report = preprocess_corpus(load_eml_directory(EML_DIR))
        self.assertEqual([e.as_dict() for e in emails], golden_records())
        self.assertEqual(report.as_dict(), dict(
            input=20, kept=20, dropped_invalid=0, dropped_empty=0,
            dropped_duplicate=0))

    def test_deterministic(self):
        raws = load_eml_directory(EML_DIR)
        first, report1 = preprocess_corpus(raws)
        second, report2 = preprocess_corpus(raws, workers=4)
        self.assertEqual([e.as_dict() for e in first],
                         [e.as_dict() for e in second])
        self.assertEqual(report1.as_dict(), report2.as_dict())

    def test_malformed_file(self):
        raws = load_eml_directory(EML_DIR)[:19]
        raws.append(RawEmail('99_malformed.eml', MALFORMED))
        emails, report = preprocess_corpus(raws)
        self.assertEqual(report.kept, 19)
        self.assertEqual(report.dropped_invalid + report.dropped_empty +
                         report.dropped_duplicate, 1)
        self.assertEqual(report.dropped_invalid, 1)

    def test_invalid_sender_dropped(self):
        raws = [
            RawEmail('1', b'From: a@b.co\n\none\n'),
            RawEmail('2', b'From: noatsign\n\ntwo\n'),
            RawEmail('3', b'From: c@d.co\n\nthree\n'),
        ]
        emails, report = preprocess_corpus(raws)
        self.assertEqual([e.id for e in emails], ['1', '3'])
        self.assertEqual(report.dropped_invalid, 1)

    def test_empty_body_dropped(self):
        raws = [RawEmail('1', b'From: a@b.co\n\n> only a quote\n')]
        emails, report = preprocess_corpus(raws)
        self.assertEqual(emails, [])
        self.assertEqual(report.dropped_empty, 1)

    def test_duplicate_keeps_first(self):
        data = b'From: a@b.co\nSubject: s\n\nsame\n'
        raws = [RawEmail('first', data), RawEmail('second', data),
                RawEmail('third', b'From: a@b.co\nSubject: s\n\nother\n')]
        emails, report = preprocess_corpus(raws)
        self.assertEqual([e.id for e in emails], ['first', 'third'])
        self.assertEqual(report.dropped_duplicate, 1)

    def test_stage_order(self):
        trace = []
        raws = [RawEmail('ok', b'From: a@b.co\n\nhello\n'),
                RawEmail('bad', MALFORMED)]
        preprocess_corpus(raws, tracer=lambda i, stage: trace.append(
            (i, stage)))
        self.assertEqual(trace, [
            ('ok', 'decode'), ('ok', 'structure'), ('ok', 'normalize'),
            ('ok', 'validate'),
            ('bad', 'decode'), ('bad', 'structure'),
        ])

    def test_label_carried(self):
        raws = load_eml_directory(EML_DIR, label='legitimate')[:2]
        emails, _ = preprocess_corpus(raws)
        self.assertEqual([e.label for e in emails],
                         ['legitimate', 'legitimate'])


class PreprocessRecordsTest(TestCase):
    def test_records(self):
        records = [
            dict(id='1', subject='Hi', sender='A@B.co', body='Hello  there',
                 label='legitimate'),
            dict(id='2', subject='Hi', sender='nobody', body='x'),
            dict(id='3', subject='Hi', sender='c@d.co', body='  '),
            dict(id='4', subject='Hi', sender='A@B.co', body='hello there'),
        ]
        emails, report = preprocess_records(records)
        self.assertEqual([e.id for e in emails], ['1'])
        self.assertEqual(emails[0].sender, 'a@b.co')
        self.assertEqual(emails[0].label, 'legitimate')
        self.assertEqual(report.as_dict(), dict(
            input=4, kept=1, dropped_invalid=1, dropped_empty=1,
            dropped_duplicate=1))

    def test_malformed_records_dropped(self):
        records = [
            dict(id='ok', subject='Hi', sender='a@uni.example', body='hello'),
            dict(id='spam', subject='Hi', sender='b@uni.example',
                 body='buy now', label='spam'),
            dict(subject='Hi', sender='c@uni.example', body='no id here'),
            ['not', 'an', 'object'],
            'just a string',
            dict(id='num', subject=7, sender='d@uni.example', body='hi'),
        ]
        emails, report = preprocess_records(records)
        self.assertEqual([e.id for e in emails], ['ok'])
        self.assertEqual(report.as_dict(), dict(
            input=6, kept=1, dropped_invalid=5, dropped_empty=0,
            dropped_duplicate=0))
