import os
import shutil
import tarfile

import pytest

from archivist.model import StructuredMetadata
from archivist.store import Store

DATA_DIR = os.path.join(os.path.dirname(__file__), 'data')
MINIMAL_DIR = os.path.join(DATA_DIR, 'minimal')


def make_tgz(source_dir, archive_path):
    """ Pack a directory the way `tar czf archive.tgz -C source_dir .` does """
    with tarfile.open(archive_path, 'w:gz') as archive:
        for name in sorted(os.listdir(source_dir)):
            archive.add(os.path.join(source_dir, name), arcname='./' + name)
    return archive_path


@pytest.fixture
def minimal_dir(tmp_path):
    target = tmp_path / 'minimal'
    shutil.copytree(MINIMAL_DIR, str(target))
    return target


@pytest.fixture
def minimal_collection(tmp_path, minimal_dir):
    """ The raw metadata files of the reference run, without config files """
    collection = tmp_path / 'collection'
    collection.mkdir()
    for name in ('config.yaml', 'time.txt', 'results.dat'):
        shutil.copy(str(minimal_dir / name), str(collection / name))
    return collection


@pytest.fixture
def minimal_tgz(tmp_path, minimal_collection):
    return make_tgz(str(minimal_collection), str(tmp_path / 'collection.tgz'))


@pytest.fixture
def store(tmp_path):
    return Store.open(str(tmp_path / 'store'), create=True)


def run_meta(vp, platform='A', rtf=1.0, extra=None):
    body = {'run': {'virtual_processes': vp, 'platform': platform,
                    'real_time_factor': rtf}}
    if extra:
        body['run'].update(extra)
    return StructuredMetadata(body=body, schema_id='s')


@pytest.fixture
def six_record_store(store):
    """ virtual_processes 8, 16, 16, 32, 16, 64 """
    for index, vp in enumerate([8, 16, 16, 32, 16, 64]):
        store.annotate(b'blob %d' % index, run_meta(float(vp)))
    return store
