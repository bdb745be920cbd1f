import logging
import os

from archivist.ArcCommand import ArcCommand
from archivist.explorer import Collection
from archivist.pipeline import Archivist, ConfigurationError, PipelineConfig

ARCHIVIST_STORE_ENVVAR = 'ARCHIVIST_STORE'


class ArcRunCommand(ArcCommand):
    name = 'run'
    help = 'Parse and structure a raw metadata collection'

    def configure_subparser(self, parser):
        ArcCommand.configure_subparser(self, parser)
        parser.add_argument('--config', type=str, required=True,
                            help='Pipeline configuration document (JSON)')
        parser.add_argument('--input', type=str, required=True,
                            help='Raw metadata collection: a directory or a .tgz archive')
        parser.add_argument('--out', type=str, required=True,
                            help='Where to write the exported metadata')
        parser.add_argument('--store', type=str,
                            help='Store to annotate - Can also be provided through '
                                 'the ARCHIVIST_STORE environment variable, '
                                 'which is only used together with --data.')
        parser.add_argument('--data', type=str,
                            help='Data file to annotate with the metadata')
        parser.add_argument('--strict', action='store_true', default=None,
                            help='Fail when a file matches several rules')
        parser.add_argument('--workers', type=int,
                            help='Number of parser threads')

    def run(self, args):
        config = PipelineConfig.load(args.config)
        data = args.data or config.data_blob_path
        store = args.store or config.store_path
        if store and not data:
            raise ConfigurationError("A store needs a data blob to annotate "
                                     "(--data or the 'data' key)", path=store)
        if not store:
            store = os.getenv(ARCHIVIST_STORE_ENVVAR)
        if data and not store:
            raise ConfigurationError("Argument --data needs --store (or an "
                                     "ARCHIVIST_STORE environment variable)",
                                     path=data)
        if data:
            config = config.replace(store_path=os.path.abspath(store),
                                    data_blob_path=os.path.abspath(data))
        config = config.replace(strict=args.strict, workers=args.workers)

        report = Archivist(config).run(Collection.open(args.input),
                                       out=args.out)
        logging.info("Parsed %d files, skipped %d" %
                     (report.fragments_parsed, report.files_skipped))
        if report.record_uid:
            logging.info("Annotated record %s" % report.record_uid)
        return 0
