"""
File-based record store: `blobs/<uid>` holds data bytes, `records.jsonl`
holds one canonical single-line JSON record per annotated blob.

Appends are serialized by an exclusive lock on `.lock` at the store root.
Readers take no lock; an unterminated last line is ignored and reported.
"""

import fcntl
import hashlib
import logging as log
import operator
import os
import re
import statistics

from dataclasses import dataclass
from datetime import datetime, timezone

from archivist.model import (ArchivistError, MISSING, Record, loads_value,
                             StructuredMetadata, canonical_text, is_number)
from archivist.parsers import coerce_lexeme

BLOB_DIR = 'blobs'
INDEX_FILE = 'records.jsonl'
LOCK_FILE = '.lock'

UID_PATTERN = re.compile(r'^[0-9a-f]{64}$')


class StoreIoError(ArchivistError):
    stage = 'store'


class StoreConflictError(ArchivistError):
    stage = 'store'


class NotFoundError(ArchivistError):
    stage = 'store'


class StoreCorruptionError(ArchivistError):
    stage = 'store'


class StoreLockedError(ArchivistError):
    stage = 'store'


class PredicateSyntaxError(ArchivistError):
    stage = 'query'


class AggregationTypeError(ArchivistError):
    stage = 'aggregate'


###############################################################################
# Predicates

OPERATORS = {
    'eq': operator.eq,
    'ne': operator.ne,
    'lt': operator.lt,
    'le': operator.le,
    'gt': operator.gt,
    'ge': operator.ge,
}

OPERATOR_TOKENS = {
    '==': 'eq',
    '!=': 'ne',
    '<': 'lt',
    '<=': 'le',
    '>': 'gt',
    '>=': 'ge',
}

WHERE_PATTERN = re.compile(r'^\s*([^\s=!<>]+)\s*(==|!=|<=|>=|<|>)\s*(.*?)\s*$')


def resolve_path(body, path):
    """ Follow a dot-separated path into a metadata body.

    A unit-wrapped leaf ({"value": v, "unit": u}) resolves to v.
    """
    node = body
    for segment in path.split('.'):
        if isinstance(node, dict) and segment in node:
            node = node[segment]
        elif isinstance(node, list) and segment.isdigit() and \
                int(segment) < len(node):
            node = node[int(segment)]
        else:
            return MISSING
    if isinstance(node, dict) and set(node) == {'value', 'unit'}:
        return node['value']
    return node


def _check_path(path):
    if not isinstance(path, str) or not path or \
            any(s == '' for s in path.split('.')):
        raise PredicateSyntaxError("Malformed path %r" % (path,), path=str(path))


@dataclass(frozen=True)
class Predicate:
    path: str
    op: str
    operand: object

    def __post_init__(self):
        _check_path(self.path)
        if self.op in OPERATOR_TOKENS:
            object.__setattr__(self, 'op', OPERATOR_TOKENS[self.op])
        if self.op not in OPERATORS:
            raise PredicateSyntaxError("Unknown operator %r" % (self.op,),
                                       path=self.path)
        operand = self.operand
        if isinstance(operand, (list, dict)):
            raise PredicateSyntaxError("Operand must be a scalar", path=self.path)
        if self.op not in ('eq', 'ne') and not is_number(operand):
            raise PredicateSyntaxError("Operator %s needs a numeric operand" %
                                       self.op, path=self.path)

    @classmethod
    def parse(cls, text):
        """ Parse `path OP value`; the value is classified like parser
        lexemes, so `16` is numeric and `"16"` is text """
        m = WHERE_PATTERN.match(text)
        if m is None or m.group(3) == '':
            raise PredicateSyntaxError("Expected 'path OP value', got %r" % text,
                                       path=text)
        return cls(m.group(1), m.group(2), coerce_lexeme(m.group(3)))

    def matches(self, body):
        value = resolve_path(body, self.path)
        if value is MISSING:
            return False
        if is_number(value) and is_number(self.operand):
            return OPERATORS[self.op](value, self.operand)
        if self.op in ('eq', 'ne'):
            if type(value) is not type(self.operand):
                return self.op == 'ne'
            return OPERATORS[self.op](value, self.operand)
        return False


def _as_predicates(predicates):
    return [p if isinstance(p, Predicate) else Predicate.parse(p)
            for p in (predicates or [])]


@dataclass(frozen=True)
class GroupStats:
    count: int
    mean: float
    std: float

    def to_dict(self):
        return {'count': self.count, 'mean': self.mean, 'std': self.std}


###############################################################################
# Lock

class StoreLock(object):
    """ Exclusive advisory lock on the store's lock file """

    def __init__(self, path, wait=True):
        self.path = path
        self.wait = wait
        self._fd = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        except OSError as e:
            raise StoreIoError("Could not open lock file: %s" % e.strerror,
                               path=self.path)
        flags = fcntl.LOCK_EX if self.wait else fcntl.LOCK_EX | fcntl.LOCK_NB
        try:
            fcntl.flock(self._fd, flags)
        except BlockingIOError:
            os.close(self._fd)
            self._fd = None
            raise StoreLockedError("Store is locked by another writer",
                                   path=self.path)
        log.debug("Acquired store lock %s" % self.path)
        return self

    def __exit__(self, exc_type, exc, tb):
        fcntl.flock(self._fd, fcntl.LOCK_UN)
        os.close(self._fd)
        self._fd = None


###############################################################################
# Store

def _now():
    return datetime.now(timezone.utc).strftime('%Y-%m-%dT%H:%M:%S.%fZ')


def _remove_quietly(path):
    try:
        os.remove(path)
    except OSError:
        pass


def _same_metadata(a, b):
    return a.schema_id == b.schema_id and \
        canonical_text(a.body, pretty=False) == canonical_text(b.body, pretty=False)


class Store(object):

    def __init__(self, root, wait=True):
        self.root = os.fspath(root)
        self.wait = wait
        self.truncated_tail = False
        self._index_path = os.path.join(self.root, INDEX_FILE)
        self._blob_dir = os.path.join(self.root, BLOB_DIR)
        self._lock_path = os.path.join(self.root, LOCK_FILE)

    @classmethod
    def open(cls, root, create=False, wait=True):
        """ Open a store, creating its layout when asked to """
        root = os.fspath(root)
        if not os.path.isdir(root) and not create:
            raise NotFoundError("No store at %s" % root, path=root)
        try:
            os.makedirs(os.path.join(root, BLOB_DIR), exist_ok=True)
            index_path = os.path.join(root, INDEX_FILE)
            if not os.path.exists(index_path):
                open(index_path, 'ab').close()
        except OSError as e:
            raise StoreIoError("Could not initialize store: %s" % e.strerror,
                               path=root)
        return cls(root, wait=wait)

    def blob_path(self, uid):
        return os.path.join(self._blob_dir, uid)

    ###########################################################################
    def _load(self):
        try:
            with open(self._index_path, 'rb') as f:
                data = f.read()
        except FileNotFoundError:
            return []
        except OSError as e:
            raise StoreIoError("Could not read index: %s" % e.strerror,
                               path=self._index_path)
        lines = data.split(b'\n')
        tail = lines.pop()
        self.truncated_tail = bool(tail)
        if tail:
            log.warning("Ignoring unterminated last line of %s (%d bytes)" %
                        (self._index_path, len(tail)))
        records = []
        for number, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                records.append(Record.from_dict(loads_value(line.decode('utf-8'))))
            except (ValueError, KeyError, TypeError) as e:
                raise StoreCorruptionError("Unreadable record on line %d: %s" %
                                           (number, e), path=self._index_path)
        return records

    def _repair_tail(self):
        """ Drop a crash-truncated last line; called with the lock held """
        try:
            with open(self._index_path, 'rb+') as f:
                data = f.read()
                if not data or data.endswith(b'\n'):
                    return
                keep = data.rfind(b'\n') + 1
                f.truncate(keep)
        except OSError as e:
            raise StoreIoError("Could not repair index: %s" % e.strerror,
                               path=self._index_path)
        log.warning("Removed %d bytes of truncated record from %s" %
                    (len(data) - keep, self._index_path))

    def _write_blob(self, uid, blob):
        """ Write a blob unless an intact copy exists; True if written """
        path = self.blob_path(uid)
        if os.path.exists(path):
            with open(path, 'rb') as f:
                if hashlib.sha256(f.read()).hexdigest() == uid:
                    return False
            log.warning("Replacing damaged blob %s" % uid)
        tmp_path = '%s.tmp%d' % (path, os.getpid())
        try:
            with open(tmp_path, 'wb') as f:
                f.write(blob)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_path, path)
        except OSError:
            _remove_quietly(tmp_path)
            raise
        return True

    def _encode(self, record):
        try:
            return canonical_text(record.to_dict(), pretty=False) \
                .encode('utf-8') + b'\n'
        except (ValueError, TypeError) as e:
            raise StoreIoError("Metadata of %s cannot be stored: %s" %
                               (record.uid, e), path=record.uid)

    def _append(self, line):
        fd = os.open(self._index_path, os.O_WRONLY | os.O_APPEND | os.O_CREAT,
                     0o644)
        try:
            os.write(fd, line)
            os.fsync(fd)
        finally:
            os.close(fd)

    ###########################################################################
    def records(self):
        return sorted(self._load(), key=Record.sort_key)

    def get(self, uid):
        for record in self._load():
            if record.uid == uid:
                return record
        return None

    def annotate(self, blob, meta):
        """ Bind a data blob to its structured metadata.

        Idempotent for identical (blob, metadata); a known blob with other
        metadata raises StoreConflictError.
        """
        if not isinstance(meta, StructuredMetadata):
            raise TypeError("annotate expects StructuredMetadata")
        uid = hashlib.sha256(blob).hexdigest()
        with StoreLock(self._lock_path, self.wait):
            self._repair_tail()
            existing = self.get(uid)
            if existing is not None:
                if _same_metadata(existing.metadata, meta):
                    log.info("Record %s already present" % uid)
                    return existing
                raise StoreConflictError("Blob %s is already annotated with "
                                         "different metadata" % uid, path=uid)
            record = Record(uid=uid, metadata=meta,
                            blob_path='%s/%s' % (BLOB_DIR, uid),
                            created_at=_now())
            line = self._encode(record)
            written = False
            try:
                written = self._write_blob(uid, blob)
                self._append(line)
            except OSError as e:
                if written:
                    _remove_quietly(self.blob_path(uid))
                raise StoreIoError("Could not write record: %s" % e.strerror,
                                   path=uid)
        log.info("Annotated blob %s (%d bytes)" % (uid, len(blob)))
        return record

    def query(self, predicates=None):
        """ Records satisfying every predicate, by created_at then uid """
        predicates = _as_predicates(predicates)
        return [r for r in self.records()
                if all(p.matches(r.metadata.body) for p in predicates)]

    def aggregate(self, predicates, group_by, target):
        """ count / mean / sample std of `target` per value of `group_by` """
        _check_path(group_by)
        _check_path(target)
        groups = {}
        for record in self.query(predicates):
            group = resolve_path(record.metadata.body, group_by)
            if group is MISSING:
                continue
            value = resolve_path(record.metadata.body, target)
            if not is_number(value):
                raise AggregationTypeError("Target %s of record %s is not "
                                           "numeric" % (target, record.uid),
                                           path=record.uid)
            label = group if isinstance(group, str) else \
                canonical_text(group, pretty=False)
            groups.setdefault(label, []).append(float(value))

        result = {}
        for label, values in groups.items():
            std = statistics.stdev(values) if len(values) > 1 else 0.0
            result[label] = GroupStats(count=len(values),
                                       mean=statistics.mean(values), std=std)
        return result

    def fetch_blob(self, uid):
        if not isinstance(uid, str) or not UID_PATTERN.match(uid) or \
                self.get(uid) is None:
            raise NotFoundError("Unknown uid %s" % uid, path=str(uid))
        try:
            with open(self.blob_path(uid), 'rb') as f:
                blob = f.read()
        except OSError as e:
            raise StoreCorruptionError("Blob of record %s is unreadable: %s" %
                                       (uid, e.strerror), path=uid)
        if hashlib.sha256(blob).hexdigest() != uid:
            raise StoreCorruptionError("Blob %s does not match its uid" % uid,
                                       path=uid)
        return blob

    def verify(self):
        """ Layout problems as (path, message); empty when consistent """
        problems = []
        records = self._load()
        if self.truncated_tail:
            problems.append((INDEX_FILE, "unterminated last line"))
        known = set()
        for record in records:
            known.add(record.uid)
            try:
                self.fetch_blob(record.uid)
            except StoreCorruptionError as e:
                problems.append((record.blob_path, e.message))
        try:
            names = os.listdir(self._blob_dir)
        except OSError:
            names = []
        for name in sorted(names):
            if name not in known:
                problems.append(('%s/%s' % (BLOB_DIR, name), "blob without record"))
        return problems
