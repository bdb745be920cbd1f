"""
Enumerate a raw metadata collection and pair its files with rules.

A collection is either a directory or a gzip-compressed tar archive. Rules
match base names; nested directories are walked, symbolic links are not
followed and hidden directories are not entered.
"""

import enum
import logging as log
import os
import posixpath
import tarfile

from dataclasses import dataclass

from archivist.model import ArchivistError, RuleDefinitionError, RuleSet

ARCHIVE_SUFFIXES = ('.tgz', '.tar.gz')


class CollectionIoError(ArchivistError):
    stage = 'explorer'


class RuleUnmatchedError(ArchivistError):
    stage = 'explorer'


class AmbiguousMatchError(ArchivistError):
    stage = 'explorer'


class CollectionKind(enum.Enum):
    DIRECTORY = 'directory'
    TAR_GZ_ARCHIVE = 'tgz'


@dataclass(frozen=True)
class Collection:
    source: str
    kind: CollectionKind

    @classmethod
    def open(cls, source):
        """ Detect the collection kind of a filesystem path """
        source = os.fspath(source)
        if os.path.isdir(source):
            return cls(source, CollectionKind.DIRECTORY)
        if not os.path.isfile(source):
            raise CollectionIoError("Collection does not exist: %s" % source,
                                    path=source)
        lowered = source.lower()
        if lowered.endswith(ARCHIVE_SUFFIXES) or tarfile.is_tarfile(source):
            return cls(source, CollectionKind.TAR_GZ_ARCHIVE)
        raise CollectionIoError("Not a directory or a .tgz archive: %s" %
                                source, path=source)


@dataclass(frozen=True)
class WorkItem:
    relative_path: str
    rule: str
    bytes_len: int

    @property
    def base_name(self):
        return posixpath.basename(self.relative_path)


def _safe_member_name(name):
    """ Normalize an archive member name, or None if it escapes the root """
    while name.startswith('./'):
        name = name[2:]
    if not name or name.startswith('/'):
        return None
    parts = name.split('/')
    if '..' in parts or any(p == '' for p in parts):
        return None
    return name


def _in_hidden_directory(relative_path):
    return any(p.startswith('.') for p in relative_path.split('/')[:-1])


def _list_directory(root):
    entries = []
    try:
        for dirpath, dirnames, filenames in os.walk(root, followlinks=False,
                                                    onerror=_raise_walk_error):
            dirnames[:] = [d for d in dirnames if not d.startswith('.')]
            for name in filenames:
                full_path = os.path.join(dirpath, name)
                if os.path.islink(full_path) or not os.path.isfile(full_path):
                    continue
                relative = os.path.relpath(full_path, root).replace(os.sep, '/')
                entries.append((relative, os.path.getsize(full_path)))
    except OSError as e:
        raise CollectionIoError("Could not read directory %s: %s" % (root, e),
                                path=root)
    return entries


def _raise_walk_error(error):
    raise error


def _list_archive(source):
    entries = []
    try:
        with tarfile.open(source, 'r:gz') as archive:
            for member in archive:
                if not member.isreg():
                    continue
                name = _safe_member_name(member.name)
                if name is None:
                    log.warning("Skipping unsafe archive member %r in %s" %
                                (member.name, source))
                    continue
                if _in_hidden_directory(name):
                    continue
                entries.append((name, member.size))
    except (OSError, tarfile.TarError, EOFError) as e:
        raise CollectionIoError("Could not read archive %s: %s" % (source, e),
                                path=source)
    return entries


def list_entries(collection):
    """ All candidate files of a collection as (relative_path, size),
    sorted by relative path """
    if collection.kind is CollectionKind.DIRECTORY:
        entries = _list_directory(collection.source)
    else:
        entries = _list_archive(collection.source)
    # archives may repeat a member name; the last one is what tar extracts
    return sorted(dict(entries).items())


def explore(collection, rules, strict=False):
    """ Build the work list of (file, rule) pairs for a collection.

    Parameters:
    --------------------------------------------------------------------
    collection: the Collection to search
    rules: RuleSet; declaration order decides multi-matches unless strict
    strict: raise AmbiguousMatchError when a file matches several rules
    """
    if not isinstance(rules, RuleSet):
        rules = RuleSet(rules)
    if len(rules) == 0:
        raise RuleDefinitionError("No file description rules given")

    entries = list_entries(collection)
    log.debug("Collection %s holds %d candidate files" %
              (collection.source, len(entries)))

    items = []
    matched_rules = set()
    for relative_path, size in entries:
        base_name = posixpath.basename(relative_path)
        candidates = rules.matching(base_name)
        if not candidates:
            continue
        if strict and len(candidates) > 1:
            raise AmbiguousMatchError(
                "File %s matches several rules: %s" %
                (relative_path, ', '.join(r.name for r in candidates)),
                path=relative_path)
        winner = candidates[0]
        matched_rules.update(r.name for r in candidates)
        items.append(WorkItem(relative_path, winner.name, size))

    for rule in rules:
        if rule.required and rule.name not in matched_rules:
            raise RuleUnmatchedError("Required rule %s matched no file" %
                                     rule.name, path=rule.name)

    items.sort(key=lambda item: (item.relative_path, item.rule))
    return items


def read_item(collection, item):
    """ Return the full byte content of a work item """
    if collection.kind is CollectionKind.DIRECTORY:
        if _safe_member_name(item.relative_path) is None:
            raise CollectionIoError("Refusing to read outside the collection",
                                    path=item.relative_path)
        full_path = os.path.join(collection.source, *item.relative_path.split('/'))
        try:
            with open(full_path, 'rb') as f:
                return f.read()
        except OSError as e:
            raise CollectionIoError("Could not read %s: %s" %
                                    (item.relative_path, e),
                                    path=item.relative_path)

    try:
        with tarfile.open(collection.source, 'r:gz') as archive:
            member = None
            for candidate in archive:
                if candidate.isreg() and \
                        _safe_member_name(candidate.name) == item.relative_path:
                    member = candidate
            if member is None:
                raise CollectionIoError("Archive member vanished: %s" %
                                        item.relative_path,
                                        path=item.relative_path)
            return archive.extractfile(member).read()
    except (OSError, tarfile.TarError, EOFError) as e:
        raise CollectionIoError("Could not read %s from %s: %s" %
                                (item.relative_path, collection.source, e),
                                path=item.relative_path)
