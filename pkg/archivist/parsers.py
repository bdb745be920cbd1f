"""
Parser registry and the built-in parsers.

A parser is any callable `fn(options, data) -> Value` registered under an id.
Built-ins: keyvalue, time, time_verbose, json, envdump, regex_capture.
"""

import json
import logging as log
import math
import re

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping

from archivist.model import (ArchivistError, INT64_MAX, INT64_MIN,
                             RegistryConflictError, loads_value)


class ParseError(ArchivistError):
    stage = 'parser'

    def __init__(self, message, line=None, column=None, path=None):
        ArchivistError.__init__(self, message, path=path)
        self.line = line
        self.column = column

    def __str__(self):
        text = ArchivistError.__str__(self)
        if self.line is not None:
            text += " at line %d, column %d" % (self.line, self.column or 1)
        return text

    def to_diagnostic(self):
        diagnostic = ArchivistError.to_diagnostic(self)
        if self.line is not None:
            diagnostic['line'] = self.line
            diagnostic['column'] = self.column
        return diagnostic


class EncodingError(ParseError):
    pass


class UnknownParserError(ArchivistError):
    stage = 'config'


class ParserOptionsError(ArchivistError):
    stage = 'config'


@dataclass(frozen=True)
class ParserSpec:
    id: str
    options: Mapping[str, Any] = field(default_factory=dict)


###############################################################################
# Lexeme classification, shared with the command line

INTEGER_LEXEME = re.compile(r'^[+-]?[0-9]+$')
FLOAT_LEXEME = re.compile(r'^[+-]?(?:[0-9]+\.[0-9]*|\.[0-9]+|[0-9]+)'
                          r'(?:[eE][+-]?[0-9]+)?$')


def coerce_lexeme(text):
    """ Classify a scalar lexeme.

    Integer when there is no decimal point or exponent (and it fits 64 bits),
    Float for other numeric lexemes, Boolean for `true`/`false`, Text for
    everything else. Text wrapped in matching quotes is returned unquoted and
    never coerced.
    """
    if len(text) >= 2 and text[0] == text[-1] and text[0] in ('"', "'"):
        return text[1:-1]
    if text == 'true':
        return True
    if text == 'false':
        return False
    if INTEGER_LEXEME.match(text):
        number = int(text)
        if INT64_MIN <= number <= INT64_MAX:
            return number
        return float(text)
    if FLOAT_LEXEME.match(text):
        number = float(text)
        if math.isfinite(number):
            return number
    return text


def _decode(data):
    try:
        return data.decode('utf-8-sig')
    except UnicodeDecodeError as e:
        raise EncodingError("Input is not valid UTF-8: %s" % e.reason,
                            line=data[:e.start].count(b'\n') + 1,
                            column=e.start - data.rfind(b'\n', 0, e.start))


###############################################################################
# Built-in parsers

def parse_keyvalue(data, delimiter=':'):
    """ Flat `key <delimiter> value` lines; `#` starts a comment line """
    if not delimiter:
        raise ParserOptionsError("keyvalue delimiter must not be empty")
    result = {}
    for number, line in enumerate(_decode(data).splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        if delimiter not in stripped:
            raise ParseError("Expected 'key %s value'" % delimiter,
                             line=number, column=1)
        key, value = stripped.split(delimiter, 1)
        key = key.strip()
        if not key:
            raise ParseError("Empty key", line=number, column=1)
        result[key] = coerce_lexeme(value.strip())
    return result


TIME_LINE = re.compile(r'^\s*(real|user|sys)\s+(\S+)\s*$')
POSIX_DURATION = re.compile(r'^([0-9]+)m([0-9]+(?:\.[0-9]*)?)s$')
PLAIN_DURATION = re.compile(r'^[0-9]+(?:\.[0-9]*)?$')


def _duration_seconds(lexeme):
    m = POSIX_DURATION.match(lexeme)
    if m:
        return int(m.group(1)) * 60 + float(m.group(2))
    if PLAIN_DURATION.match(lexeme):
        return float(lexeme)
    return None


def parse_time(data):
    """ Output of the shell `time` keyword or `time -p` """
    result = {}
    for number, line in enumerate(_decode(data).splitlines(), 1):
        m = TIME_LINE.match(line)
        if not m:
            continue
        seconds = _duration_seconds(m.group(2))
        if seconds is None:
            raise ParseError("Malformed duration %r" % m.group(2),
                             line=number, column=line.index(m.group(2)) + 1)
        result[m.group(1)] = seconds
    for label in ('real', 'user', 'sys'):
        if label not in result:
            raise ParseError("Missing '%s' time" % label)
    return {'real': result['real'], 'user': result['user'], 'sys': result['sys']}


VERBOSE_FIELDS = {
    'User time (seconds)': 'user',
    'System time (seconds)': 'sys',
    'Elapsed (wall clock) time (h:mm:ss or m:ss)': 'real',
    'Percent of CPU this job got': 'cpu_percent',
    'Maximum resident set size (kbytes)': 'max_rss_kb',
    'Exit status': 'exit_status',
}


def _clock_seconds(text):
    total = 0.0
    for part in text.split(':'):
        total = 60 * total + float(part)
    return total


def parse_time_verbose(data):
    """ Report of GNU `/usr/bin/time -v` """
    result = {}
    for number, line in enumerate(_decode(data).splitlines(), 1):
        stripped = line.strip()
        label = None
        for candidate in VERBOSE_FIELDS:
            if stripped.startswith(candidate + ':'):
                label = candidate
                break
        if label is None:
            continue
        value = stripped[len(label) + 1:].strip()
        key = VERBOSE_FIELDS[label]
        try:
            if key == 'real':
                result[key] = _clock_seconds(value)
            elif key in ('user', 'sys'):
                result[key] = float(value)
            else:
                result[key] = int(value.rstrip('%'))
        except ValueError:
            raise ParseError("Malformed value %r for %s" % (value, label),
                             line=number, column=line.index(value) + 1)
    for key in ('real', 'user', 'sys'):
        if key not in result:
            raise ParseError("Missing '%s' time" % key)
    return result


def _check_text(value):
    """ Reject strings (keys included) that cannot be written as UTF-8, such
    as lone surrogates from \\ud800 escapes """
    if isinstance(value, str):
        try:
            value.encode('utf-8')
        except UnicodeEncodeError:
            raise EncodingError("String %r is not encodable as UTF-8" % value)
    elif isinstance(value, dict):
        for key, item in value.items():
            _check_text(key)
            _check_text(item)
    elif isinstance(value, list):
        for item in value:
            _check_text(item)


def parse_json(data):
    text = _decode(data)
    try:
        value = loads_value(text)
    except json.JSONDecodeError as e:
        raise ParseError("Malformed JSON: %s" % e.msg, line=e.lineno,
                         column=e.colno)
    except ValueError as e:
        raise ParseError(str(e))
    _check_text(value)
    return value


def parse_envdump(data):
    """ `NAME=value` lines; values stay Text """
    result = {}
    for line in _decode(data).splitlines():
        if '=' not in line:
            continue
        name, value = line.split('=', 1)
        if name:
            result[name] = value
    return result


PCRE_GROUP = re.compile(r'\(\?<([A-Za-z_][A-Za-z0-9_]*)>')


def compile_capture_pattern(pattern):
    """ Compile a named-group pattern; `(?<name>...)` is accepted as well as
    `(?P<name>...)` """
    try:
        compiled = re.compile(PCRE_GROUP.sub(r'(?P<\1>', pattern), re.MULTILINE)
    except (re.error, TypeError) as e:
        raise ParserOptionsError("Invalid capture pattern %r: %s" % (pattern, e))
    if not compiled.groupindex:
        raise ParserOptionsError("Capture pattern %r has no named group" %
                                 pattern)
    return compiled


def parse_regex_capture(data, pattern):
    compiled = compile_capture_pattern(pattern)
    m = compiled.search(_decode(data))
    if m is None:
        raise ParseError("Pattern %r does not match" % pattern)
    result = {}
    for name in compiled.groupindex:
        captured = m.group(name)
        result[name] = None if captured is None else coerce_lexeme(captured)
    return result


###############################################################################
# Registry

ParserFunction = Callable[[Mapping[str, Any], bytes], Any]


class ParserRegistry(object):
    """ Parsers keyed by id. Frozen before any parsing starts. """

    def __init__(self):
        self._parsers: Dict[str, ParserFunction] = {}
        self._frozen = False

    @classmethod
    def with_builtins(cls):
        registry = cls()
        registry.register('keyvalue', lambda options, data:
                          parse_keyvalue(data, options.get('delimiter', ':')))
        registry.register('time', lambda options, data: parse_time(data))
        registry.register('time_verbose',
                          lambda options, data: parse_time_verbose(data))
        registry.register('json', lambda options, data: parse_json(data))
        registry.register('envdump', lambda options, data: parse_envdump(data))
        registry.register('regex_capture', _regex_capture_entry)
        return registry

    def register(self, parser_id, func):
        if self._frozen:
            raise RegistryConflictError("Parser registry is frozen", path=parser_id)
        if parser_id in self._parsers:
            raise RegistryConflictError("Parser %s is already registered" %
                                        parser_id, path=parser_id)
        self._parsers[parser_id] = func

    def freeze(self):
        self._frozen = True

    def __contains__(self, parser_id):
        return parser_id in self._parsers

    def ids(self):
        return sorted(self._parsers)

    def parse(self, spec, data):
        """ Dispatch bytes to the parser named by a ParserSpec """
        if spec.id not in self._parsers:
            raise UnknownParserError("Unknown parser %s" % spec.id, path=spec.id)
        log.debug("Parsing %d bytes with %s" % (len(data), spec.id))
        return self._parsers[spec.id](spec.options, data)


def _regex_capture_entry(options, data):
    if 'pattern' not in options:
        raise ParserOptionsError("regex_capture needs a 'pattern' option")
    return parse_regex_capture(data, options['pattern'])


def validate_options(parser_id, options):
    """ Early checks for built-in parser options at configuration time """
    if parser_id == 'regex_capture':
        if 'pattern' not in options:
            raise ParserOptionsError("regex_capture needs a 'pattern' option",
                                     path=parser_id)
        compile_capture_pattern(options['pattern'])
    elif parser_id == 'keyvalue':
        delimiter = options.get('delimiter', ':')
        if not isinstance(delimiter, str) or not delimiter:
            raise ParserOptionsError("keyvalue delimiter must be non-empty text",
                                     path=parser_id)


DEFAULT_REGISTRY = ParserRegistry.with_builtins()
DEFAULT_REGISTRY.freeze()


def parse(spec, data, registry=DEFAULT_REGISTRY):
    return registry.parse(spec, data)
