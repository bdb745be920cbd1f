"""
Merge fragments into one namespace and structure them with a schema.

The schema is a JSON Schema subset (`type`, `properties`, `required`) whose
leaves carry an `x-archivist` directive:

    source    path expression `<rule>/<pointer>` selecting a fragment value
    compute   arithmetic over numbers and `${<rule>/<pointer>}` references
    unit      wraps the leaf as {"value": ..., "unit": ...}
    optional  omit the leaf instead of failing when its input is missing
"""

import copy
import functools
import json
import logging as log
import math
import re

from abc import ABC, abstractmethod
from dataclasses import dataclass

from jsonschema import Draft7Validator

from archivist.model import (ArchivistError, LIST_INDEX_PATTERN, MISSING,
                             PointerSyntaxError, RULE_NAME_PATTERN,
                             StructuredMetadata, StructuringSchema,
                             is_number, iter_floats, split_pointer, value_get)

DIRECTIVE_KEY = 'x-archivist'
DIRECTIVES = ('source', 'compute', 'unit', 'optional')
SUPPORTED_TYPES = ('object', 'array', 'string', 'number', 'integer', 'boolean')
NODE_KEYWORDS = ('type', 'properties', 'required', DIRECTIVE_KEY,
                 'title', 'description', '$schema', '$id', '$comment')


class MissingSourceError(ArchivistError):
    stage = 'formatter'


class AmbiguousSourceError(MissingSourceError):
    pass


class ComputeError(ArchivistError):
    stage = 'formatter'


class SchemaValidationError(ArchivistError):
    stage = 'formatter'


class SchemaDefinitionError(ArchivistError):
    stage = 'formatter'

    def __init__(self, message, path=None, violations=None):
        ArchivistError.__init__(self, message, path=path)
        self.violations = violations or [(path, message)]


class ComputeSyntaxError(SchemaDefinitionError):
    pass


class SchemaLoadError(ArchivistError):
    stage = 'config'


###############################################################################
# Path expressions and the fragment namespace

def parse_path_expr(text):
    """ Split `<rule>/<pointer>` into (rule, pointer) """
    if not isinstance(text, str):
        raise PointerSyntaxError("Path expression must be text", path=str(text))
    rule, separator, pointer = text.partition('/')
    if not RULE_NAME_PATTERN.match(rule):
        raise PointerSyntaxError("Path expression %r does not start with a rule "
                                 "name" % text, path=text)
    if separator and pointer == '':
        raise PointerSyntaxError("Trailing '/' in path expression %r" % text,
                                 path=text)
    split_pointer(pointer)
    return rule, pointer


class FragmentNamespace(object):
    """ Fragment bodies by rule name. A rule that matched several files holds
    a list of bodies in work-list order. """

    def __init__(self, slots=None, multi=()):
        self._slots = dict(slots or {})
        self._multi = frozenset(multi)

    @classmethod
    def from_fragments(cls, fragments):
        grouped = {}
        for fragment in fragments:
            grouped.setdefault(fragment.rule, []).append(fragment.body)
        slots = {}
        multi = set()
        for rule, bodies in grouped.items():
            if len(bodies) == 1:
                slots[rule] = bodies[0]
            else:
                slots[rule] = bodies
                multi.add(rule)
        return cls(slots, multi)

    @classmethod
    def coerce(cls, ns):
        if isinstance(ns, cls):
            return ns
        return cls(ns)

    def rules(self):
        return list(self._slots)

    def is_multi(self, rule):
        return rule in self._multi

    def as_value(self):
        return copy.deepcopy(self._slots)

    def resolve(self, path_expr):
        rule, pointer = parse_path_expr(path_expr)
        if rule not in self._slots:
            return MISSING
        if rule in self._multi:
            first = pointer.split('/', 1)[0]
            if not LIST_INDEX_PATTERN.match(first):
                raise AmbiguousSourceError(
                    "Rule %s matched several files; address one as %s/<index>/..."
                    % (rule, rule), path=path_expr)
        return value_get(self._slots[rule], pointer)


###############################################################################
# Compute expressions
#
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := number | '${' PathExpr '}' | '(' expr ')'

class Expression(ABC):

    @abstractmethod
    def evaluate(self, ns):
        pass

    @abstractmethod
    def references(self):
        pass


@dataclass(frozen=True)
class Number(Expression):
    value: float

    def evaluate(self, ns):
        return self.value

    def references(self):
        return []


@dataclass(frozen=True)
class Reference(Expression):
    path: str

    def evaluate(self, ns):
        value = ns.resolve(self.path)
        if value is MISSING:
            raise MissingSourceError("No value at %s" % self.path, path=self.path)
        if not is_number(value):
            raise ComputeError("Reference %s is not numeric: %r" %
                               (self.path, value), path=self.path)
        return float(value)

    def references(self):
        return [self.path]


@dataclass(frozen=True)
class BinaryOp(Expression):
    op: str
    left: Expression
    right: Expression

    def evaluate(self, ns):
        lhs = self.left.evaluate(ns)
        rhs = self.right.evaluate(ns)
        if self.op == '+':
            result = lhs + rhs
        elif self.op == '-':
            result = lhs - rhs
        elif self.op == '*':
            result = lhs * rhs
        else:
            if rhs == 0.0:
                raise ComputeError("Division by zero")
            result = lhs / rhs
        if not math.isfinite(result):
            raise ComputeError("Non-finite intermediate result %r" % result)
        return result

    def references(self):
        return self.left.references() + self.right.references()


TOKEN = re.compile(r'\s*(?:'
                   r'(?P<number>(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)'
                   r'|\$\{(?P<ref>[^}]*)\}'
                   r'|(?P<op>[-+*/()])'
                   r')')


def _tokenize(text):
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            return tokens
        m = TOKEN.match(text, pos)
        if m is None:
            raise ComputeSyntaxError("Unexpected character %r at offset %d in "
                                     "%r" % (text[pos], pos, text))
        if m.group('number') is not None:
            tokens.append(('number', m.group('number'), pos))
        elif m.group('ref') is not None:
            tokens.append(('ref', m.group('ref'), pos))
        else:
            tokens.append((m.group('op'), m.group('op'), pos))
        pos = m.end()


class _ComputeParser(object):

    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        if self.pos < len(self.tokens):
            return self.tokens[self.pos][0]
        return 'EOF'

    def take(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def fail(self, message):
        offset = self.tokens[self.pos][2] if self.pos < len(self.tokens) \
            else len(self.text)
        raise ComputeSyntaxError("%s at offset %d in %r" %
                                 (message, offset, self.text))

    def parse(self):
        node = self.expr()
        if self.peek() == ')':
            self.fail("Unbalanced parenthesis")
        if self.peek() != 'EOF':
            self.fail("Unexpected token")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in ('+', '-'):
            op = self.take()[0]
            node = BinaryOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek() in ('*', '/'):
            op = self.take()[0]
            node = BinaryOp(op, node, self.factor())
        return node

    def factor(self):
        kind = self.peek()
        if kind == 'number':
            return Number(float(self.take()[1]))
        if kind == 'ref':
            path = self.take()[1]
            try:
                parse_path_expr(path)
            except PointerSyntaxError as e:
                raise ComputeSyntaxError("Bad reference in %r: %s" %
                                         (self.text, e.message))
            return Reference(path)
        if kind == '(':
            self.take()
            node = self.expr()
            if self.peek() != ')':
                self.fail("Unbalanced parenthesis")
            self.take()
            return node
        if kind == 'EOF':
            self.fail("Unexpected end of expression")
        self.fail("Unexpected token %r" % kind)


@functools.lru_cache(maxsize=256)
def _parse_compute_cached(text):
    return _ComputeParser(text).parse()


def parse_compute(text):
    """ Parse compute expression text into an Expression tree """
    if not isinstance(text, str):
        raise ComputeSyntaxError("Compute expression must be text")
    return _parse_compute_cached(text)


def references(expr):
    if isinstance(expr, str):
        expr = parse_compute(expr)
    return expr.references()


def eval_compute(expr, ns):
    """ Evaluate a compute expression over a namespace; always a Float """
    if isinstance(expr, str):
        expr = parse_compute(expr)
    result = expr.evaluate(FragmentNamespace.coerce(ns))
    if not math.isfinite(result):
        raise ComputeError("Non-finite result %r" % result)
    return result


###############################################################################
# Schema checks

def _pointer(path, *segments):
    return path + ''.join('/' + str(s) for s in segments)


def _check_directive(directive, path):
    problems = []
    if not isinstance(directive, dict):
        return [(path, "Directive must be an object")]
    for key in directive:
        if key not in DIRECTIVES:
            problems.append((_pointer(path, key), "Unknown directive %r" % key))
    has_source = 'source' in directive
    has_compute = 'compute' in directive
    if has_source == has_compute:
        problems.append((path, "Leaf must carry exactly one of 'source' or "
                               "'compute'"))
    if has_source:
        try:
            parse_path_expr(directive['source'])
        except PointerSyntaxError as e:
            problems.append((_pointer(path, 'source'), e.message))
    if has_compute:
        try:
            parse_compute(directive['compute'])
        except SchemaDefinitionError as e:
            problems.append((_pointer(path, 'compute'), e.message))
    if 'unit' in directive and not isinstance(directive['unit'], str):
        problems.append((_pointer(path, 'unit'), "'unit' must be text"))
    if 'optional' in directive and not isinstance(directive['optional'], bool):
        problems.append((_pointer(path, 'optional'), "'optional' must be a "
                                                     "boolean"))
    return problems


def _check_node(node, path):
    if not isinstance(node, dict):
        return [(path or '/', "Schema node must be an object")]
    problems = []
    for key in node:
        if key not in NODE_KEYWORDS:
            problems.append((_pointer(path, key), "Unsupported keyword %r" % key))
    declared = node.get('type')
    if declared is not None and declared not in SUPPORTED_TYPES:
        problems.append((_pointer(path, 'type'), "Unsupported type %r" %
                         (declared,)))
    if DIRECTIVE_KEY in node:
        if 'properties' in node:
            problems.append((path or '/', "Node has both 'properties' and a "
                                          "directive"))
        problems.extend(_check_directive(node[DIRECTIVE_KEY],
                                         _pointer(path, DIRECTIVE_KEY)))
    elif 'properties' in node:
        if declared not in (None, 'object'):
            problems.append((_pointer(path, 'type'), "Node with 'properties' "
                                                     "must be an object"))
        properties = node['properties']
        if isinstance(properties, dict):
            for name, child in properties.items():
                problems.extend(_check_node(child, _pointer(path, 'properties',
                                                            name)))
    else:
        problems.append((path or '/', "Leaf carries no %s directive" %
                         DIRECTIVE_KEY))
    return problems


def check_schema(document):
    """ Every violation of the structuring schema rules as (path, message) """
    if not isinstance(document, dict):
        return [('/', "Schema must be a JSON object")]
    problems = []
    meta = Draft7Validator(Draft7Validator.META_SCHEMA)
    for error in meta.iter_errors(document):
        problems.append((_pointer('', *error.absolute_path) or '/',
                         error.message))
    if 'properties' not in document or DIRECTIVE_KEY in document:
        problems.append(('/', "Root must be an object node with 'properties'"))
    else:
        problems.extend(_check_node(document, ''))
    seen = set()
    unique = []
    for problem in problems:
        if problem not in seen:
            seen.add(problem)
            unique.append(problem)
    return unique


def build_schema(document):
    """ Check a schema document and wrap it as a StructuringSchema """
    problems = check_schema(document)
    if problems:
        path, message = problems[0]
        raise SchemaDefinitionError(message, path=path, violations=problems)
    return StructuringSchema.from_document(document)


def load_schema(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except OSError as e:
        raise SchemaLoadError("Could not read schema: %s" % e.strerror,
                              path=str(path))
    except ValueError as e:
        raise SchemaLoadError("Schema is not valid JSON: %s" % e, path=str(path))
    log.debug("Loaded schema %s" % path)
    return build_schema(document)


def iter_leaves(document, path=''):
    """ Yield (json_path, directive) for every directive leaf """
    for name, child in document.get('properties', {}).items():
        child_path = _pointer(path, name)
        if DIRECTIVE_KEY in child:
            yield child_path, child[DIRECTIVE_KEY]
        else:
            for leaf in iter_leaves(child, child_path):
                yield leaf


def referenced_rules(schema):
    """ Rule names used by the directives of a schema """
    rules = []
    for _, directive in iter_leaves(schema.document):
        if 'source' in directive:
            paths = [directive['source']]
        else:
            paths = references(directive['compute'])
        for path_expr in paths:
            rule = parse_path_expr(path_expr)[0]
            if rule not in rules:
                rules.append(rule)
    return rules


###############################################################################
# Validation

def output_shape(node):
    """ The plain JSON Schema an assembled document must satisfy """
    shape = {}
    if 'type' in node:
        shape['type'] = node['type']
    if 'required' in node:
        shape['required'] = list(node['required'])
    if DIRECTIVE_KEY in node:
        unit = node[DIRECTIVE_KEY].get('unit')
        if unit is not None:
            return {'type': 'object',
                    'properties': {'value': shape,
                                   'unit': {'type': 'string'}},
                    'required': ['value', 'unit']}
        return shape
    if 'properties' in node:
        shape['properties'] = dict((name, output_shape(child)) for name, child
                                   in node['properties'].items())
    return shape


def _document_order(shape, segments):
    key = []
    node = shape
    for segment in segments:
        properties = node.get('properties', {}) if isinstance(node, dict) else {}
        if isinstance(segment, int):
            key.append(segment)
            node = {}
        elif segment in properties:
            key.append(list(properties).index(segment))
            node = properties[segment]
        else:
            key.append(len(properties))
            node = {}
    return key


def _failures(body, shape):
    errors = list(Draft7Validator(shape).iter_errors(body))
    failures = []
    missing_by_path = {}
    for error in errors:
        segments = list(error.absolute_path)
        if error.validator == 'required':
            where = tuple(segments)
            if where not in missing_by_path:
                missing_by_path[where] = [p for p in error.validator_value
                                          if p not in error.instance]
            if missing_by_path[where]:
                segments.append(missing_by_path[where].pop(0))
        failures.append((segments, error.message))
    for path, number in iter_floats(body):
        if not math.isfinite(number):
            segments = [int(s) if s.isdigit() else s
                        for s in path.strip('/').split('/') if s]
            failures.append((segments, "Non-finite number %r" % number))
    return failures


def validate(body, schema):
    """ Check a document against a schema's output shape.

    Returns True or raises SchemaValidationError naming the first failing
    path in document order.
    """
    document = schema.document if isinstance(schema, StructuringSchema) else schema
    shape = output_shape(document)
    failures = _failures(body, shape)
    if not failures:
        return True
    failures.sort(key=lambda f: _document_order(shape, f[0]))
    segments, message = failures[0]
    raise SchemaValidationError(message, path=_pointer('', *segments) or '/')


###############################################################################
# Assembly

def _evaluate_leaf(ns, directive, json_path):
    optional = directive.get('optional', False)
    if 'source' in directive:
        value = ns.resolve(directive['source'])
        if value is MISSING:
            if optional:
                log.debug("Omitting optional %s" % json_path)
                return MISSING
            raise MissingSourceError("No value at source %s for %s" %
                                     (directive['source'], json_path),
                                     path=directive['source'])
        value = copy.deepcopy(value)
    else:
        try:
            value = eval_compute(directive['compute'], ns)
        except AmbiguousSourceError:
            raise
        except MissingSourceError:
            if optional:
                log.debug("Omitting optional %s" % json_path)
                return MISSING
            raise
        except ComputeError as e:
            raise e.at(json_path)
    if 'unit' in directive:
        return {'value': value, 'unit': directive['unit']}
    return value


def _build(ns, node, json_path):
    result = {}
    for name, child in node['properties'].items():
        child_path = _pointer(json_path, name)
        if DIRECTIVE_KEY in child:
            value = _evaluate_leaf(ns, child[DIRECTIVE_KEY], child_path)
            if value is not MISSING:
                result[name] = value
        else:
            result[name] = _build(ns, child, child_path)
    return result


def assemble(ns, schema):
    """ Structure a fragment namespace with a schema and validate the result """
    ns = FragmentNamespace.coerce(ns)
    body = _build(ns, schema.document, '')
    validate(body, schema)
    return StructuredMetadata(body=body, schema_id=schema.schema_id)


def passthrough(ns):
    """ The namespace itself as output, for runs without a schema """
    return StructuredMetadata(body=FragmentNamespace.coerce(ns).as_value())
