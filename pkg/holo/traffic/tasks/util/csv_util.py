"""
The csv dialect shared by every published table.
"""

import csv


class TableDialect(csv.Dialect):
    """Comma separated, unix newlines, quoted only when needed."""
    delimiter = ','
    doublequote = True
    escapechar = None
    lineterminator = "\n"
    quotechar = '"'
    quoting = csv.QUOTE_MINIMAL
    skipinitialspace = False
    strict = True


DIALECTS = {
    'holo': TableDialect,
}

for dialect_name, dialect_class in DIALECTS.items():
    csv.register_dialect(dialect_name, dialect_class)
