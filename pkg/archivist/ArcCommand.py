import json
import sys

from archivist.model import canonical_text


def write_diagnostic(diagnostic):
    """ One machine-readable diagnostic line on standard error """
    sys.stderr.write(json.dumps(diagnostic, sort_keys=True,
                                ensure_ascii=False) + '\n')


class ArcCommand:
    name = ''
    help = ''

    def run(self, args):
        pass

    def configure_subparser(self, parser):
        pass

    def emit(self, value, pretty=True):
        """ Print a value as canonical JSON on standard output """
        text = canonical_text(value, pretty=pretty)
        sys.stdout.write(text if pretty else text + '\n')
