"""Exact flat cosine index over unit-normalized email embeddings.

File layout (little-endian)::

    magic "PGIX" | version u16 | dim u32 | count u64
    count x ( id_len u32 | id utf-8 | label u8 | f32 x dim )
    crc32 u32 over everything above

Rows are held and scored in float64. The file stores float32, so a loaded
index scores the float32-rounded vectors: within about 1e-7 of the scores
the index gave before it was saved.
"""
import io
import json
import struct
import zlib

import numpy as np

from phishguard.main.embedding import NORM_TOLERANCE, ZERO_NORM, \
    EmbeddingVector, embed_email, l2_normalize
from phishguard.main.emails import LEGITIMATE, PHISHING
from phishguard.main.exceptions import CorruptFile, DimensionMismatch, \
    DuplicateId, FormatVersionMismatch, IndexFrozen, NotNormalized, \
    ZeroVector


MAGIC = b'PGIX'
FORMAT_VERSION = 1
HEADER = struct.Struct('<4sHIQ')
ID_LEN = struct.Struct('<I')
LABEL = struct.Struct('<B')
CRC = struct.Struct('<I')

LABEL_CODES = {None: 255, LEGITIMATE: 0, PHISHING: 1}
LABELS_BY_CODE = dict((v, k) for k, v in LABEL_CODES.items())


class IndexEntry(object):
    def __init__(self, email_id, vector, label=LEGITIMATE):
        self.email_id = email_id
        self.vector = vector
        self.label = label


class SearchHit(object):
    def __init__(self, email_id, score, rank):
        self.email_id = email_id
        self.score = score
        self.rank = rank

    def __repr__(self):
        return '<SearchHit {} {} {:.6f}>'.format(
            self.rank, self.email_id, self.score)

    def as_dict(self):
        return dict(email_id=self.email_id, score=round(self.score, 6),
                    rank=self.rank)


class FlatIndex(object):
    """Single writer while building; ``freeze`` makes it read-only."""

    def __init__(self, dim):
        self.dim = dim
        self.ids = []
        self.labels = []
        self._positions = {}
        self._rows = []
        self._matrix = np.zeros((0, dim), dtype=np.float64)
        self.frozen = False

    def __len__(self):
        return len(self.ids)

    def __contains__(self, email_id):
        return email_id in self._positions

    def add(self, entry):
        if self.frozen:
            raise IndexFrozen('index is frozen')
        if entry.email_id in self._positions:
            raise DuplicateId('duplicate id {}'.format(entry.email_id),
                              email_id=entry.email_id)
        vector = entry.vector
        if not isinstance(vector, EmbeddingVector):
            vector = EmbeddingVector(vector)
        if vector.dim != self.dim:
            raise DimensionMismatch(
                'vector has {} dims, index has {}'.format(
                    vector.dim, self.dim),
                expected=self.dim, actual=vector.dim)
        if not vector.is_unit():
            raise NotNormalized(
                'vector norm {:.6f} is not 1'.format(vector.norm()),
                email_id=entry.email_id)
        self._positions[entry.email_id] = len(self.ids)
        self.ids.append(entry.email_id)
        self.labels.append(entry.label)
        self._rows.append(vector.values.astype(np.float64))
        self._matrix = None
        return self

    def freeze(self):
        self._materialize()
        self.frozen = True
        return self

    def _materialize(self):
        if self._matrix is None:
            if self._rows:
                self._matrix = np.vstack(self._rows)
            else:
                self._matrix = np.zeros((0, self.dim), dtype=np.float64)
        return self._matrix

    def vector(self, email_id):
        return EmbeddingVector(
            self._materialize()[self._positions[email_id]])

    def search(self, query, k=5, exclude=()):
        if k < 1:
            raise ValueError('k must be >= 1')
        if not isinstance(query, EmbeddingVector):
            query = EmbeddingVector(query)
        if query.norm() < ZERO_NORM:
            raise ZeroVector('query vector is zero')
        if query.dim != self.dim:
            raise DimensionMismatch(
                'query has {} dims, index has {}'.format(query.dim, self.dim),
                expected=self.dim, actual=query.dim)
        if not query.is_unit(NORM_TOLERANCE):
            raise NotNormalized('query is not unit-normalized')
        matrix = self._materialize()
        if matrix.shape[0] == 0:
            return []
        scores = matrix.dot(query.values)
        positions = np.arange(len(scores))
        # primary key: descending score, ties by insertion order
        order = np.lexsort((positions, -scores))
        exclude = set(exclude)
        hits = []
        for pos in order:
            email_id = self.ids[pos]
            if email_id in exclude:
                continue
            hits.append(SearchHit(email_id, float(scores[pos]),
                                  len(hits) + 1))
            if len(hits) == k:
                break
        return hits

    def manifest(self):
        return dict(
            format_version=FORMAT_VERSION,
            dim=self.dim,
            count=len(self),
            entries=[dict(email_id=i, label=lbl)
                     for i, lbl in zip(self.ids, self.labels)],
        )


def index_add(idx, entry):
    return idx.add(entry)


def knn_search(idx, query, k=5, exclude=()):
    return idx.search(query, k=k, exclude=exclude)


def serialize(idx):
    buf = io.BytesIO()
    buf.write(HEADER.pack(MAGIC, FORMAT_VERSION, idx.dim, len(idx)))
    matrix = idx._materialize()
    for pos, email_id in enumerate(idx.ids):
        raw_id = email_id.encode('utf-8')
        buf.write(ID_LEN.pack(len(raw_id)))
        buf.write(raw_id)
        buf.write(LABEL.pack(LABEL_CODES[idx.labels[pos]]))
        buf.write(matrix[pos].astype('<f4').tobytes())
    body = buf.getvalue()
    return body + CRC.pack(zlib.crc32(body) & 0xffffffff)


def deserialize(data, expected_dim=None):
    if len(data) < HEADER.size + CRC.size:
        raise CorruptFile('index file truncated')
    body, trailer = data[:-CRC.size], data[-CRC.size:]
    if CRC.unpack(trailer)[0] != zlib.crc32(body) & 0xffffffff:
        raise CorruptFile('index checksum mismatch')
    magic, version, dim, count = HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise CorruptFile('not a phishguard index file')
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            'index format version {} != {}'.format(version, FORMAT_VERSION),
            expected=FORMAT_VERSION, actual=version)
    if expected_dim is not None and dim != expected_dim:
        raise FormatVersionMismatch(
            'index dim {} != configured {}'.format(dim, expected_dim),
            expected=expected_dim, actual=dim)
    idx = FlatIndex(dim)
    offset = HEADER.size
    row_bytes = 4 * dim
    try:
        for _ in range(count):
            (id_len,) = ID_LEN.unpack_from(body, offset)
            offset += ID_LEN.size
            email_id = body[offset:offset + id_len].decode('utf-8')
            offset += id_len
            (code,) = LABEL.unpack_from(body, offset)
            offset += LABEL.size
            row = np.frombuffer(body, dtype='<f4', count=dim, offset=offset)
            offset += row_bytes
            # bypass add(): stored f32 rows are unit only to f32 precision
            idx._positions[email_id] = len(idx.ids)
            idx.ids.append(email_id)
            idx.labels.append(LABELS_BY_CODE.get(code))
            idx._rows.append(row.astype(np.float64))
    except (struct.error, ValueError, UnicodeDecodeError):
        raise CorruptFile('index entries truncated')
    if offset != len(body):
        raise CorruptFile('trailing bytes after index entries')
    idx._matrix = None
    return idx.freeze()


def index_save(idx, path):
    with open(path, 'wb') as fh:
        fh.write(serialize(idx))


def index_load(path, expected_dim=None):
    with open(path, 'rb') as fh:
        return deserialize(fh.read(), expected_dim=expected_dim)


def write_manifest(idx, path):
    with io.open(path, 'w', encoding='utf-8') as fh:
        fh.write(json.dumps(idx.manifest(), indent=2, sort_keys=True))


def build_index(provider, emails, labels=(LEGITIMATE,)):
    """Embed and add every email whose label is in ``labels``.

    ``labels=None`` admits every email, unlabeled ones included.
    """
    idx = FlatIndex(provider.dim)
    for e in emails:
        if labels is not None and e.label not in labels:
            continue
        vector = l2_normalize(embed_email(provider, e))
        idx.add(IndexEntry(e.id, vector, e.label))
    return idx.freeze()
