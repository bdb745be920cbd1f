"""
Shared domain types and the neutral value tree exchanged by all stages.

A Value is one of None, bool, int (64-bit signed), float (finite at rest),
str, list of Value or dict of str -> Value. Dicts keep insertion order; the
canonical text form sorts keys.
"""

import enum
import hashlib
import json
import math
import re

from dataclasses import dataclass, field
from typing import Any, Dict, Mapping

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

RULE_NAME_PATTERN = re.compile(r'^[A-Za-z_][A-Za-z0-9_]*$')
LIST_INDEX_PATTERN = re.compile(r'^(0|[1-9][0-9]*)$')


class ArchivistError(Exception):
    """ Base class for every error raised by the pipeline stages.

    Parameters:
    --------------------------------------------------------------------
    message: human readable description
    path: the file path, JSON path or path expression the error refers to
    """

    stage = 'archivist'

    def __init__(self, message, path=None):
        Exception.__init__(self, message)
        self._message = message
        self.path = path

    @property
    def message(self):
        return self._message

    def at(self, path):
        """ Attach a path if the error does not carry one yet """
        if self.path is None:
            self.path = path
        return self

    def to_diagnostic(self):
        return {'stage': self.stage, 'path': self.path, 'message': self._message}

    def __str__(self):
        if self.path is None:
            return self._message
        return "%s (path:%s)" % (self._message, self.path)


class PointerSyntaxError(ArchivistError):
    stage = 'formatter'


class RegistryConflictError(ArchivistError):
    stage = 'config'


class RuleDefinitionError(ArchivistError):
    stage = 'config'


class _Missing(object):
    """ Outcome of a lookup on an absent path. Falsy, and never a Value. """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = object.__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return 'MISSING'


MISSING = _Missing()


def is_number(value):
    """ True for Integer and Float values; Booleans are not numbers here """
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def split_pointer(pointer):
    """ Split a `/`-separated pointer into its segments.

    The empty pointer addresses the root and yields no segments. Leading,
    trailing or doubled separators are rejected.
    """
    if not isinstance(pointer, str):
        raise PointerSyntaxError("Pointer must be text, got %s" %
                                 type(pointer).__name__)
    if pointer == '':
        return []
    segments = pointer.split('/')
    if any(s == '' for s in segments):
        raise PointerSyntaxError("Empty segment in pointer %r" % pointer,
                                 path=pointer)
    return segments


def value_get(root, pointer):
    """ Return the sub-value of `root` at `pointer`, or MISSING """
    node = root
    for segment in split_pointer(pointer):
        if isinstance(node, dict):
            if segment not in node:
                return MISSING
            node = node[segment]
        elif isinstance(node, list):
            if not LIST_INDEX_PATTERN.match(segment):
                return MISSING
            index = int(segment)
            if index >= len(node):
                return MISSING
            node = node[index]
        else:
            return MISSING
    return node


def iter_floats(value, path=''):
    """ Yield (json_path, float) for every float inside a value tree """
    if isinstance(value, float):
        yield (path or '/', value)
    elif isinstance(value, dict):
        for key, child in value.items():
            for item in iter_floats(child, '%s/%s' % (path, key)):
                yield item
    elif isinstance(value, list):
        for index, child in enumerate(value):
            for item in iter_floats(child, '%s/%d' % (path, index)):
                yield item


def is_finite_tree(value):
    return all(math.isfinite(f) for _, f in iter_floats(value))


###############################################################################
# Canonical text

def canonical_text(value, pretty=True):
    """ Render a value as canonical JSON text.

    Keys are sorted by code point, floats use the shortest round-tripping
    decimal (always with a fraction or exponent), integers have no decimal
    point. The pretty form uses two-space indentation and ends with a newline;
    the compact form is a single line without a newline.
    """
    if pretty:
        return json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False,
                          allow_nan=False) + '\n'
    return json.dumps(value, sort_keys=True, ensure_ascii=False,
                      allow_nan=False, separators=(',', ':'))


def _classify_json_int(lexeme):
    number = int(lexeme)
    if INT64_MIN <= number <= INT64_MAX:
        return number
    return float(lexeme)


def _reject_constant(name):
    raise ValueError("Non-finite number %s is not a valid value" % name)


def loads_value(text):
    """ Parse JSON text into a Value tree.

    Numbers without fraction or exponent inside the 64-bit signed range are
    Integers, everything else is a Float. NaN and Infinity are refused.
    Raises json.JSONDecodeError or ValueError.
    """
    return json.loads(text, parse_int=_classify_json_int,
                      parse_constant=_reject_constant)


def content_hash(value):
    return hashlib.sha256(canonical_text(value, pretty=False)
                          .encode('utf-8')).hexdigest()


###############################################################################
# File description rules

class RuleKind(enum.Enum):
    EXACT_NAME = 'exact'
    REGEX = 'regex'


@dataclass(frozen=True)
class FileDescriptionRule:
    name: str
    pattern: str
    kind: RuleKind = RuleKind.EXACT_NAME
    parser: str = 'keyvalue'
    options: Mapping[str, Any] = field(default_factory=dict)
    required: bool = True

    def __post_init__(self):
        if not isinstance(self.name, str) or not RULE_NAME_PATTERN.match(self.name):
            raise RuleDefinitionError("Rule name %r is not an identifier" %
                                      (self.name,), path=str(self.name))
        if not isinstance(self.kind, RuleKind):
            object.__setattr__(self, 'kind', RuleKind(self.kind))
        if self.kind is RuleKind.REGEX:
            try:
                compiled = re.compile(self.pattern)
            except re.error as e:
                raise RuleDefinitionError("Rule %s: invalid regular expression "
                                          "%r: %s" % (self.name, self.pattern, e),
                                          path=self.name)
            object.__setattr__(self, '_compiled', compiled)

    def matches(self, base_name):
        """ Match a base name. Regex rules are anchored full matches and
        hidden names only match exact-name rules that spell them out. """
        if self.kind is RuleKind.EXACT_NAME:
            return base_name == self.pattern
        if base_name.startswith('.'):
            return False
        return self._compiled.fullmatch(base_name) is not None


class RuleSet(object):
    """ Ordered collection of rules; declaration order is priority order """

    def __init__(self, rules):
        self._rules = tuple(rules)
        seen = set()
        for rule in self._rules:
            if rule.name in seen:
                raise RuleDefinitionError("Duplicate rule name %s" % rule.name,
                                          path=rule.name)
            seen.add(rule.name)

    def __iter__(self):
        return iter(self._rules)

    def __len__(self):
        return len(self._rules)

    def __contains__(self, name):
        return any(r.name == name for r in self._rules)

    def get(self, name):
        for rule in self._rules:
            if rule.name == name:
                return rule
        return None

    def names(self):
        return [r.name for r in self._rules]

    def matching(self, base_name):
        return [r for r in self._rules if r.matches(base_name)]


###############################################################################
# Documents

@dataclass(frozen=True)
class Fragment:
    rule: str
    path: str
    body: Any


PASSTHROUGH_SCHEMA_ID = 'passthrough'


@dataclass(frozen=True)
class StructuringSchema:
    document: Dict[str, Any]
    schema_id: str

    @classmethod
    def from_document(cls, document):
        return cls(document=document, schema_id=content_hash(document))


@dataclass(frozen=True)
class StructuredMetadata:
    body: Dict[str, Any]
    schema_id: str = PASSTHROUGH_SCHEMA_ID


@dataclass(frozen=True)
class Record:
    uid: str
    metadata: StructuredMetadata
    blob_path: str
    created_at: str

    def to_dict(self):
        return {
            'uid': self.uid,
            'metadata': self.metadata.body,
            'schema_id': self.metadata.schema_id,
            'blob_path': self.blob_path,
            'created_at': self.created_at,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(uid=data['uid'],
                   metadata=StructuredMetadata(body=data['metadata'],
                                               schema_id=data['schema_id']),
                   blob_path=data['blob_path'],
                   created_at=data['created_at'])

    def sort_key(self):
        return (self.created_at, self.uid)
