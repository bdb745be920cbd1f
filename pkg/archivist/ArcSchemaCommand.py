import logging

from archivist.ArcCommand import ArcCommand
from archivist.formatter import load_schema


class ArcSchemaCommand(ArcCommand):
    name = 'validate-schema'
    help = 'Check a structuring schema and report every violation'

    def configure_subparser(self, parser):
        ArcCommand.configure_subparser(self, parser)
        parser.add_argument('--schema', type=str, required=True,
                            help='Structuring schema (JSON)')

    def run(self, args):
        # SchemaDefinitionError carries every violation; the shell prints them
        schema = load_schema(args.schema)
        logging.info("Schema %s is valid (id %s)" % (args.schema, schema.schema_id))
        return 0
