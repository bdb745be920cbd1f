"""
The Archivist: explore -> parse -> assemble -> export -> annotate for one
raw metadata collection under one configuration document.
"""

import dataclasses
import json
import logging as log
import os

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from jsonschema import Draft7Validator

from archivist import exporter, parsers
from archivist.explorer import explore, list_entries, read_item
from archivist.formatter import (FragmentNamespace, assemble, load_schema,
                                 passthrough, referenced_rules)
from archivist.model import (ArchivistError, Fragment, FileDescriptionRule,
                             RuleSet, is_finite_tree)
from archivist.parsers import ParseError, ParserSpec
from archivist.store import Store

CONFIG_SCHEMA = {
    '$schema': 'http://json-schema.org/draft-07/schema#',
    'type': 'object',
    'required': ['rules'],
    'additionalProperties': False,
    'properties': {
        'rules': {
            'type': 'array',
            'minItems': 1,
            'items': {
                'type': 'object',
                'required': ['name', 'pattern'],
                'additionalProperties': False,
                'properties': {
                    'name': {'type': 'string'},
                    'pattern': {'type': 'string'},
                    'kind': {'enum': ['exact', 'regex']},
                    'required': {'type': 'boolean'},
                    'parser': {
                        'type': 'object',
                        'required': ['id'],
                        'additionalProperties': False,
                        'properties': {
                            'id': {'type': 'string'},
                            'options': {'type': 'object'},
                        },
                    },
                },
            },
        },
        'schema': {'type': 'string'},
        'export_format': {'type': 'string'},
        'strict': {'type': 'boolean'},
        'store': {'type': 'string'},
        'data': {'type': 'string'},
        'workers': {'type': 'integer', 'minimum': 1},
    },
}


class ConfigurationError(ArchivistError):
    stage = 'config'


@dataclass(frozen=True)
class PipelineConfig:
    rules: RuleSet
    schema_path: Optional[str] = None
    export_format: str = 'json'
    strict: bool = False
    store_path: Optional[str] = None
    data_blob_path: Optional[str] = None
    workers: int = 1

    @classmethod
    def from_document(cls, document, base_dir='.'):
        """ Build a config from its JSON document; relative paths are taken
        against `base_dir` """
        errors = sorted(Draft7Validator(CONFIG_SCHEMA).iter_errors(document),
                        key=lambda e: list(e.absolute_path))
        if errors:
            error = errors[0]
            where = '/' + '/'.join(str(s) for s in error.absolute_path)
            raise ConfigurationError("Invalid pipeline configuration: %s" %
                                     error.message, path=where)

        rules = []
        for entry in document['rules']:
            parser = entry.get('parser', {'id': 'keyvalue'})
            rules.append(FileDescriptionRule(
                name=entry['name'],
                pattern=entry['pattern'],
                kind=entry.get('kind', 'exact'),
                parser=parser['id'],
                options=dict(parser.get('options', {})),
                required=entry.get('required', True)))

        def resolve(key):
            if key not in document:
                return None
            return os.path.normpath(os.path.join(base_dir, document[key]))

        return cls(rules=RuleSet(rules),
                   schema_path=resolve('schema'),
                   export_format=document.get('export_format', 'json'),
                   strict=document.get('strict', False),
                   store_path=resolve('store'),
                   data_blob_path=resolve('data'),
                   workers=document.get('workers', 1))

    @classmethod
    def load(cls, path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                document = json.load(f)
        except OSError as e:
            raise ConfigurationError("Could not read configuration: %s" %
                                     e.strerror, path=str(path))
        except ValueError as e:
            raise ConfigurationError("Configuration is not valid JSON: %s" % e,
                                     path=str(path))
        return cls.from_document(document,
                                 base_dir=os.path.dirname(os.path.abspath(path)))

    def replace(self, **changes):
        """ Copy with the given fields overridden; None values are ignored """
        changes = dict((k, v) for k, v in changes.items() if v is not None)
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RunReport:
    metadata_bytes: bytes
    record_uid: Optional[str]
    fragments_parsed: int
    files_skipped: int


class Archivist(object):
    """ Instantiates and orchestrates the processing stages.

    Parameters:
    --------------------------------------------------------------------
    config: a PipelineConfig; checked here, before any file is touched
    parser_registry: parsers available to the rules
    exporter_registry: export formats available to the run
    """

    def __init__(self, config, parser_registry=parsers.DEFAULT_REGISTRY,
                 exporter_registry=exporter.DEFAULT_REGISTRY):
        self.config = config
        self.parsers = parser_registry
        self.exporters = exporter_registry
        self.schema = None
        self._check_config()

    def _check_config(self):
        config = self.config
        for rule in config.rules:
            if rule.parser not in self.parsers:
                raise parsers.UnknownParserError(
                    "Rule %s uses unknown parser %s" % (rule.name, rule.parser),
                    path=rule.name)
            parsers.validate_options(rule.parser, rule.options)

        if config.export_format not in self.exporters:
            raise exporter.UnknownExporterError(
                "Unknown export format %s" % config.export_format,
                path=config.export_format)

        if config.store_path and not config.data_blob_path:
            raise ConfigurationError("A store needs a data blob to annotate",
                                     path=config.store_path)
        if config.workers < 1:
            raise ConfigurationError("workers must be at least 1")

        if config.schema_path is not None:
            self.schema = load_schema(config.schema_path)
            for rule_name in referenced_rules(self.schema):
                if rule_name not in config.rules:
                    raise ConfigurationError("Schema refers to undeclared "
                                             "rule %s" % rule_name,
                                             path=config.schema_path)

    ###########################################################################
    def _parse_item(self, collection, item):
        rule = self.config.rules.get(item.rule)
        data = read_item(collection, item)
        try:
            body = self.parsers.parse(ParserSpec(rule.parser, rule.options), data)
        except ArchivistError as e:
            raise e.at(item.relative_path)
        except Exception as e:
            raise ParseError("Parser %s failed: %s" % (rule.parser, e),
                             path=item.relative_path) from e
        if not is_finite_tree(body):
            raise ParseError("Parser %s produced a non-finite number" %
                             rule.parser, path=item.relative_path)
        log.debug("Parsed %s with %s" % (item.relative_path, rule.parser))
        return Fragment(rule=item.rule, path=item.relative_path, body=body)

    def structure(self, collection):
        """ Explore, parse and assemble; returns (metadata, items, entries) """
        config = self.config
        items = explore(collection, config.rules, strict=config.strict)
        entries = list_entries(collection)
        log.info("%d of %d files in %s matched a rule" %
                 (len(items), len(entries), collection.source))

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            fragments = list(pool.map(lambda item:
                                      self._parse_item(collection, item), items))

        ns = FragmentNamespace.from_fragments(fragments)
        if self.schema is None:
            meta = passthrough(ns)
        else:
            meta = assemble(ns, self.schema)
        return meta, items, entries

    def annotate(self, meta):
        """ Bind the configured data blob to `meta` in the configured store;
        returns the record uid """
        try:
            with open(self.config.data_blob_path, 'rb') as f:
                blob = f.read()
        except OSError as e:
            raise ConfigurationError("Could not read data blob: %s" %
                                     e.strerror,
                                     path=self.config.data_blob_path)
        store = Store.open(self.config.store_path, create=True)
        return store.annotate(blob, meta).uid

    def run(self, collection, out=None):
        """ Full pipeline; the export is written to `out` (when given) before
        the store is touched """
        meta, items, entries = self.structure(collection)
        data = self.exporters.export(self.config.export_format, meta)
        if out is not None:
            exporter.write_bytes(data, out)

        record_uid = None
        if self.config.store_path:
            record_uid = self.annotate(meta)

        return RunReport(metadata_bytes=data, record_uid=record_uid,
                         fragments_parsed=len(items),
                         files_skipped=len(entries) - len(items))


def run(config, collection, out=None):
    return Archivist(config).run(collection, out=out)
