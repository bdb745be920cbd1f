#!/usr/bin/env python

import sys

from archivist.ArcShell import ArcShell

if __name__ == '__main__':
    sys.exit(ArcShell().main())
