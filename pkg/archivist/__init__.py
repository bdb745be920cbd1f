__title__ = 'archivist'
__version__ = '0.1.0'
__build__ = 0x01
__license__ = 'MIT'

from archivist.model import ArchivistError, MISSING, value_get
