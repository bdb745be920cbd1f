import hashlib
import json
import os
import shutil

import pytest

from conftest import MINIMAL_DIR, run_meta

from archivist.explorer import Collection, RuleUnmatchedError
from archivist.formatter import SchemaLoadError, SchemaValidationError
from archivist.model import ArchivistError, RuleDefinitionError
from archivist.parsers import (ParseError, ParserOptionsError, ParserRegistry,
                               UnknownParserError)
from archivist.pipeline import (Archivist, ConfigurationError, PipelineConfig,
                                run)
from archivist.store import Store


def load_config(**overrides):
    config = PipelineConfig.load(os.path.join(MINIMAL_DIR, 'pipeline.json'))
    return config.replace(**overrides)


def snapshot(root):
    """ Every file below a directory with its bytes """
    files = {}
    for dirpath, _, filenames in os.walk(root):
        for name in filenames:
            path = os.path.join(dirpath, name)
            with open(path, 'rb') as f:
                files[os.path.relpath(path, root)] = f.read()
    return files


def test_minimal_example(minimal_collection):
    report = run(load_config(), Collection.open(str(minimal_collection)))
    body = json.loads(report.metadata_bytes)
    assert body['run']['virtual_processes'] == 16.0
    assert body['run']['real_time_factor'] == 12.0
    assert b'"virtual_processes": 16.0' in report.metadata_bytes
    for name in (b'step_size', b'"user"', b'"sys"'):
        assert name not in report.metadata_bytes
    assert report.fragments_parsed == 2
    assert report.files_skipped == 1
    assert report.record_uid is None


def test_archive_gives_same_bytes(minimal_collection, minimal_tgz):
    config = load_config()
    from_directory = run(config, Collection.open(str(minimal_collection)))
    from_archive = run(config, Collection.open(minimal_tgz))
    assert from_directory.metadata_bytes == from_archive.metadata_bytes


def test_runs_are_deterministic(tmp_path):
    digests = set()
    for attempt in range(3):
        copy = tmp_path / ('copy%d' % attempt)
        shutil.copytree(MINIMAL_DIR, str(copy))
        report = run(load_config(workers=attempt + 1), Collection.open(str(copy)))
        digests.add(hashlib.sha256(report.metadata_bytes).hexdigest())
    assert len(digests) == 1


def test_passthrough(minimal_collection):
    config = load_config()
    config = PipelineConfig(rules=config.rules)
    report = run(config, Collection.open(str(minimal_collection)))
    body = json.loads(report.metadata_bytes)
    assert body == {'config': {'scale': 100, 'step_size': 0.1, 'sim_time': 10.0,
                               'procs': 4, 'threads': 4},
                    'time': {'real': 120.0, 'user': 464.1, 'sys': 1.2}}


def test_run_annotates_store(tmp_path, minimal_collection):
    store_root = str(tmp_path / 'store')
    data = str(minimal_collection / 'results.dat')
    report = run(load_config(store_path=store_root, data_blob_path=data),
                 Collection.open(str(minimal_collection)))
    with open(data, 'rb') as f:
        blob = f.read()
    assert report.record_uid == hashlib.sha256(blob).hexdigest()
    store = Store.open(store_root)
    [record] = store.query(['run.virtual_processes == 16'])
    assert record.uid == report.record_uid
    assert store.fetch_blob(record.uid) == blob


def test_run_writes_out_before_annotating(tmp_path, minimal_collection):
    store_root = str(tmp_path / 'store')
    config = load_config(store_path=store_root,
                         data_blob_path=str(minimal_collection / 'results.dat'))
    out = tmp_path / 'meta.json'
    report = run(config, Collection.open(str(minimal_collection)), out=str(out))
    assert out.read_bytes() == report.metadata_bytes
    assert Store.open(store_root).get(report.record_uid) is not None

    with pytest.raises(ArchivistError) as info:
        run(config.replace(store_path=str(tmp_path / 'other')),
            Collection.open(str(minimal_collection)),
            out=str(tmp_path / 'missing' / 'meta.json'))
    assert info.value.stage == 'exporter'
    assert not (tmp_path / 'other').exists()


def test_missing_required_file_stores_nothing(tmp_path, minimal_collection):
    store_root = str(tmp_path / 'store')
    Store.open(store_root, create=True)
    before = snapshot(store_root)
    os.remove(str(minimal_collection / 'time.txt'))
    config = load_config(store_path=store_root,
                         data_blob_path=str(minimal_collection / 'results.dat'))
    with pytest.raises(RuleUnmatchedError):
        run(config, Collection.open(str(minimal_collection)))
    assert snapshot(store_root) == before


def test_validation_failure_leaves_store_untouched(tmp_path, minimal_collection):
    store_root = str(tmp_path / 'store')
    store = Store.open(store_root, create=True)
    store.annotate(b'earlier', run_meta(8.0))
    before = snapshot(store_root)

    schema_path = tmp_path / 'strict-schema.json'
    with open(os.path.join(MINIMAL_DIR, 'schema.json')) as f:
        document = json.load(f)
    document['properties']['run']['properties']['procs']['type'] = 'string'
    schema_path.write_text(json.dumps(document))

    config = load_config(schema_path=str(schema_path), store_path=store_root,
                         data_blob_path=str(minimal_collection / 'results.dat'))
    with pytest.raises(SchemaValidationError) as info:
        run(config, Collection.open(str(minimal_collection)))
    assert info.value.path == '/run/procs'
    assert snapshot(store_root) == before
    assert len(Store.open(store_root).records()) == 1


def test_parse_errors_name_the_file(minimal_collection):
    (minimal_collection / 'time.txt').write_bytes(b'real 1.0\n')
    with pytest.raises(ParseError) as info:
        run(load_config(), Collection.open(str(minimal_collection)))
    assert info.value.path == 'time.txt'


def test_plugin_parser_failures_become_parse_errors(minimal_collection):
    registry = ParserRegistry.with_builtins()

    def explode(options, data):
        raise KeyError('boom')
    registry.register('explode', explode)
    registry.freeze()
    config = PipelineConfig.from_document({
        'rules': [{'name': 'time', 'pattern': 'time.txt',
                   'parser': {'id': 'explode'}}]})
    with pytest.raises(ParseError) as info:
        Archivist(config, parser_registry=registry).run(
            Collection.open(str(minimal_collection)))
    assert info.value.path == 'time.txt'


def test_config_errors(tmp_path):
    with pytest.raises(UnknownParserError):
        Archivist(PipelineConfig.from_document(
            {'rules': [{'name': 'a', 'pattern': 'a', 'parser': {'id': 'yaml'}}]}))
    with pytest.raises(ParserOptionsError):
        Archivist(PipelineConfig.from_document(
            {'rules': [{'name': 'a', 'pattern': 'a',
                        'parser': {'id': 'regex_capture'}}]}))
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_document({'rules': [], 'schema': 'x.json'})
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_document({'rules': [{'name': 'a', 'pattern': 'a'}],
                                      'colour': 'blue'})
    with pytest.raises(RuleDefinitionError):
        PipelineConfig.from_document({'rules': [{'name': 'a', 'pattern': 'a'},
                                                {'name': 'a', 'pattern': 'b'}]})
    with pytest.raises(ConfigurationError):
        Archivist(load_config(store_path=str(tmp_path)))
    with pytest.raises(SchemaLoadError):
        Archivist(load_config(schema_path=str(tmp_path / 'missing.json')))
    with pytest.raises(ConfigurationError):
        PipelineConfig.load(str(tmp_path / 'missing.json'))


def test_schema_must_only_reference_declared_rules():
    config = PipelineConfig.from_document({
        'rules': [{'name': 'config', 'pattern': 'config.yaml'}],
        'schema': os.path.join(MINIMAL_DIR, 'schema.json')})
    with pytest.raises(ConfigurationError) as info:
        Archivist(config)
    assert 'time' in info.value.message


def test_relative_paths_follow_the_config_file():
    config = load_config()
    assert config.schema_path == os.path.join(os.path.abspath(MINIMAL_DIR),
                                              'schema.json')


def test_every_error_has_a_stage(minimal_collection):
    os.remove(str(minimal_collection / 'config.yaml'))
    with pytest.raises(ArchivistError) as info:
        run(load_config(), Collection.open(str(minimal_collection)))
    assert info.value.to_diagnostic() == {'stage': 'explorer', 'path': 'config',
                                          'message': 'Required rule config '
                                                     'matched no file'}
