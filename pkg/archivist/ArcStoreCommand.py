import logging
import os
import sys

from archivist import exporter
from archivist.ArcCommand import ArcCommand, write_diagnostic
from archivist.ArcRunCommand import ARCHIVIST_STORE_ENVVAR
from archivist.pipeline import ConfigurationError
from archivist.store import Predicate, Store, StoreCorruptionError


def requires_store_dir(func):
    def wrapper(self, args):
        if not args.store:
            raise ConfigurationError("Argument --store is required (Or set an "
                                     "ARCHIVIST_STORE environment variable)")
        self.store = Store.open(args.store)
        return func(self, args)
    return wrapper


class ArcStoreCommand(ArcCommand):
    """ Base class for commands that read a record store """

    def configure_subparser(self, parser):
        ArcCommand.configure_subparser(self, parser)
        parser.add_argument('--store', type=str,
                            default=os.getenv(ARCHIVIST_STORE_ENVVAR),
                            help='Path to the record store - Can also be provided '
                                 'through the ARCHIVIST_STORE environment variable.')

    def add_where(self, parser):
        parser.add_argument('--where', action='append', default=[],
                            metavar='"PATH OP VALUE"',
                            help='Filter records; repeat to combine with AND. '
                                 'OP is one of == != < <= > >=')


class ArcQueryCommand(ArcStoreCommand):
    name = 'query'
    help = 'List the records whose metadata satisfy every --where filter'

    def configure_subparser(self, parser):
        ArcStoreCommand.configure_subparser(self, parser)
        self.add_where(parser)
        parser.add_argument('--format', choices=['json', 'table'], default='json',
                            help='json: one record per line; table: for people')

    @requires_store_dir
    def run(self, args):
        predicates = [Predicate.parse(text) for text in args.where]
        records = self.store.query(predicates)
        logging.info("%d records match" % len(records))
        if args.format == 'table':
            self._print_table(records)
            return 0
        for record in records:
            self.emit({'uid': record.uid, 'metadata': record.metadata.body},
                      pretty=False)
        return 0

    def _print_table(self, records):
        for record in records:
            paths = sorted(_flatten(record.metadata.body))
            print("%s  %s" % (record.uid[:12], record.created_at))
            for path, value in paths:
                print("    %-40s %s" % (path, value))


def _flatten(value, prefix=''):
    if isinstance(value, dict) and value:
        for key, child in value.items():
            for item in _flatten(child, '%s.%s' % (prefix, key) if prefix else key):
                yield item
    else:
        yield (prefix, value)


class ArcAggregateCommand(ArcStoreCommand):
    name = 'aggregate'
    help = 'Count, mean and standard deviation of a field per group'

    def configure_subparser(self, parser):
        ArcStoreCommand.configure_subparser(self, parser)
        self.add_where(parser)
        parser.add_argument('--group-by', type=str, required=True,
                            help='Metadata path whose value names the group')
        parser.add_argument('--target', type=str, required=True,
                            help='Numeric metadata path to summarize')

    @requires_store_dir
    def run(self, args):
        predicates = [Predicate.parse(text) for text in args.where]
        groups = self.store.aggregate(predicates, args.group_by, args.target)
        self.emit(dict((label, stats.to_dict())
                       for label, stats in groups.items()))
        return 0


class ArcVerifyCommand(ArcStoreCommand):
    name = 'verify'
    help = 'Check that every record has an intact blob'

    @requires_store_dir
    def run(self, args):
        problems = self.store.verify()
        for path, message in problems:
            write_diagnostic({'stage': 'store', 'path': path, 'message': message})
        if problems:
            raise StoreCorruptionError("%d problems found" % len(problems),
                                       path=args.store)
        logging.info("Store %s is consistent" % args.store)
        return 0


class ArcFetchCommand(ArcStoreCommand):
    name = 'fetch'
    help = 'Write the data blob of a record to a file'

    def configure_subparser(self, parser):
        ArcStoreCommand.configure_subparser(self, parser)
        parser.add_argument('--uid', type=str, required=True,
                            help='Record uid (sha256 of the data)')
        parser.add_argument('--out', type=str, required=True,
                            help='Destination file, - for standard output')

    @requires_store_dir
    def run(self, args):
        blob = self.store.fetch_blob(args.uid)
        if args.out == '-':
            sys.stdout.buffer.write(blob)
        else:
            exporter.write_bytes(blob, args.out)
        return 0
