"""
Serialization of structured metadata. `json` is always registered.
"""

import logging as log
import os

from archivist.model import ArchivistError, RegistryConflictError, canonical_text


class UnknownExporterError(ArchivistError):
    stage = 'config'


class ExportIoError(ArchivistError):
    stage = 'exporter'


def export_json(meta):
    """ Canonical JSON: UTF-8, LF, two-space indent, sorted keys,
    shortest round-trip floats, trailing newline """
    return canonical_text(meta.body, pretty=True).encode('utf-8')


class ExporterRegistry(object):

    def __init__(self):
        self._exporters = {'json': export_json}
        self._frozen = False

    def register_exporter(self, exporter_id, func):
        if self._frozen:
            raise RegistryConflictError("Exporter registry is frozen",
                                        path=exporter_id)
        if exporter_id in self._exporters:
            raise RegistryConflictError("Exporter %s is already registered" %
                                        exporter_id, path=exporter_id)
        self._exporters[exporter_id] = func

    def freeze(self):
        self._frozen = True

    def __contains__(self, exporter_id):
        return exporter_id in self._exporters

    def export(self, exporter_id, meta):
        if exporter_id not in self._exporters:
            raise UnknownExporterError("Unknown export format %s" % exporter_id,
                                       path=exporter_id)
        return self._exporters[exporter_id](meta)


DEFAULT_REGISTRY = ExporterRegistry()
DEFAULT_REGISTRY.freeze()


def register_exporter(exporter_id, func, registry=DEFAULT_REGISTRY):
    registry.register_exporter(exporter_id, func)


def export(exporter_id, meta, registry=DEFAULT_REGISTRY):
    return registry.export(exporter_id, meta)


def write(meta, path, fmt='json', registry=DEFAULT_REGISTRY):
    """ Export to a file, replacing it atomically """
    return write_bytes(registry.export(fmt, meta), path)


def write_bytes(data, path):
    tmp_path = '%s.tmp%d' % (path, os.getpid())
    try:
        with open(tmp_path, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except OSError as e:
        raise ExportIoError("Could not write %s: %s" % (path, e.strerror),
                            path=str(path))
    log.info("Wrote %d bytes of metadata to %s" % (len(data), path))
    return data
