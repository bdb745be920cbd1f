import argparse
import logging

import archivist
from archivist.ArcCommand import write_diagnostic
from archivist.ArcRunCommand import ArcRunCommand
from archivist.ArcSchemaCommand import ArcSchemaCommand
from archivist.ArcStoreCommand import (ArcAggregateCommand, ArcFetchCommand,
                                       ArcQueryCommand, ArcVerifyCommand)

EXIT_CODES = {
    'config': 2,
    'query': 2,
    'explorer': 3,
    'parser': 4,
    'formatter': 5,
    'aggregate': 5,
    'exporter': 6,
    'store': 6,
}
EXIT_UNHANDLED = 1


class ArcShell:

    def __init__(self):
        self.commands = [
            ArcRunCommand(),
            ArcQueryCommand(),
            ArcAggregateCommand(),
            ArcSchemaCommand(),
            ArcVerifyCommand(),
            ArcFetchCommand(),
        ]

    def _get_version(self):
        return archivist.__version__

    def build_parser(self):
        parser = argparse.ArgumentParser(prog='archivist',
                                         description='Archivist metadata pipeline')
        parser.add_argument('--debug', action="store_true",
                            help="Enable debugging output and tracebacks")
        parser.add_argument('--verbose', action="store_true",
                            help="Report progress on standard error")
        parser.add_argument('--version', action='version',
                            version='Archivist %s' % self._get_version())
        subparsers = parser.add_subparsers(dest="command", title="Command",
                                           description="Action to perform")
        subparsers.required = True
        for command in self.commands:
            subparser = subparsers.add_parser(command.name, help=command.help)
            command.configure_subparser(subparser)
        return parser

    def main(self, argv=None):
        args = self.build_parser().parse_args(argv)

        log_level = logging.WARNING
        if args.verbose:
            log_level = logging.INFO
        if args.debug:
            log_level = logging.DEBUG

        logging.basicConfig(format='[%(levelname)-8s] %(message)s',
                            level=log_level)

        return self.run_action(args.command, args)

    def run_action(self, action, args):
        command = [x for x in self.commands if x.name == action][0]

        try:
            return command.run(args) or 0

        except archivist.ArchivistError as e:
            if args.debug:
                raise
            violations = getattr(e, 'violations', None)
            if violations:
                for path, message in violations:
                    write_diagnostic({'stage': e.stage, 'path': path,
                                      'message': message})
            else:
                write_diagnostic(e.to_diagnostic())
            return EXIT_CODES.get(e.stage, EXIT_UNHANDLED)

        except Exception as e:
            if args.debug:
                raise
            write_diagnostic({'stage': 'unhandled', 'path': None,
                              'message': str(e)})
            return EXIT_UNHANDLED
