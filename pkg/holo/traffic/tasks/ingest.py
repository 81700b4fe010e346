"""
Readers and writers for the published table formats.

Every table is a comma separated file with a header row.  The header must
name exactly the schema's columns, in any order; files are always written
in the canonical column order.  Timestamps are stored internally as
UTC-naive epoch seconds (floats) and rendered as ``YYYY-MM-DD hh:mm:ss``,
with a ``.fff`` millisecond suffix only when the value is not a whole
second.  Floats are rendered with three decimals.
"""

import csv
import datetime
import logging
from collections import namedtuple
from io import StringIO

from holo.traffic.tasks.exceptions import TableFormatError
from holo.traffic.tasks.util import csv_util  # pylint: disable=unused-import


log = logging.getLogger(__name__)

DIALECT = 'holo'
TIMESTAMP_FORMAT = '%Y-%m-%d %H:%M:%S'
EPOCH = datetime.datetime(1970, 1, 1)
LIST_SEPARATOR = '#'
ROAD_ID_SEPARATOR = '_'

TURN_CODES = ('S', 'L', 'R', 'U')
UNKNOWN_TURN = 'Unknown'
MEASURED_TURN_CODES = TURN_CODES + (UNKNOWN_TURN,)

LARGE_VEHICLE = 1
REGULAR_VEHICLE = 2
VEHICLE_TYPES = (LARGE_VEHICLE, REGULAR_VEHICLE)

OBSERVED = 'observed'
INFERRED = 'inferred'

ON_FSRN = 'on_fsrn'
INNER_ZONE = 'inner_zone'

# Numerical slack used when checking relations between rendered values.
TOLERANCE = 1e-6


def parse_timestamp(value):
    """Convert a rendered timestamp into epoch seconds."""
    if '.' in value:
        parsed = datetime.datetime.strptime(value, TIMESTAMP_FORMAT + '.%f')
    else:
        parsed = datetime.datetime.strptime(value, TIMESTAMP_FORMAT)
    return (parsed - EPOCH).total_seconds()


def format_timestamp(seconds):
    """Render epoch seconds, rounding to the millisecond."""
    total_millis = int(round(seconds * 1000))
    whole_seconds, millis = divmod(total_millis, 1000)
    rendered = (EPOCH + datetime.timedelta(seconds=whole_seconds)).strftime(TIMESTAMP_FORMAT)
    if millis:
        rendered += '.{0:03d}'.format(millis)
    return rendered


def format_float(value):
    """Render a float with exactly three decimals."""
    return '{0:.3f}'.format(value)


def make_road_id(upstream, downstream):
    """Build the ROADID of the segment from `upstream` to `downstream`."""
    return '{0}{1}{2}'.format(upstream, ROAD_ID_SEPARATOR, downstream)


def split_road_id(road_id):
    """
    Split a ROADID into its (upstream, downstream) node pair.

    Raises:
        ValueError: the identifier is not two non-empty, distinct node IDs.
    """
    parts = road_id.split(ROAD_ID_SEPARATOR)
    if len(parts) != 2 or not all(parts) or parts[0] == parts[1]:
        raise ValueError('malformed road id {0!r}'.format(road_id))
    return parts[0], parts[1]


def _text(value):
    if value == '':
        raise ValueError('empty value')
    return value


def _tokens(value):
    if value == '':
        return ()
    return tuple(value.split(LIST_SEPARATOR))


def _render_tokens(values):
    return LIST_SEPARATOR.join(values)


def _optional(parse):
    def parse_optional(value):
        if value == '':
            return None
        return parse(value)
    return parse_optional


def _render_optional(render):
    def render_optional(value):
        if value is None:
            return ''
        return render(value)
    return render_optional


def _flag(value):
    if value not in ('0', '1'):
        raise ValueError('expected 0 or 1')
    return value == '1'


def _render_flag(value):
    return '1' if value else '0'


class Column(object):
    """One column of a schema: its header name, the row attribute it fills and its codecs."""

    def __init__(self, name, field, parse=_text, render=str):
        self.name = name
        self.field = field
        self.parse = parse
        self.render = render


def _integer_column(name, field):
    return Column(name, field, parse=int, render=str)


def _float_column(name, field):
    return Column(name, field, parse=float, render=format_float)


def _timestamp_column(name, field):
    return Column(name, field, parse=parse_timestamp, render=format_timestamp)


def _tokens_column(name, field):
    return Column(name, field, parse=_tokens, render=_render_tokens)


class Schema(object):
    """
    A table layout together with the invariants every row must satisfy.

    Args:
        name (str): Human readable name, used in messages.
        columns (list): `Column` definitions in canonical order.
        check_row: callable(row) raising `TableFormatError` (without a row
            number) when a row violates an invariant.
        check_table: callable(rows) for invariants spanning several rows.
    """

    def __init__(self, name, columns, check_row=None, check_table=None):
        self.name = name
        self.columns = columns
        self.row_class = namedtuple(
            ''.join(part.capitalize() for part in name.split('_')) + 'Row',
            [column.field for column in columns]
        )
        self.check_row = check_row
        self.check_table = check_table

    @property
    def header(self):
        """Column names in canonical order."""
        return [column.name for column in self.columns]

    def parse_row(self, record, row_number):
        """Convert one header-keyed record of strings into a validated row."""
        values = {}
        for column in self.columns:
            raw = record[column.name]
            try:
                values[column.field] = column.parse(raw)
            except ValueError as exc:
                raise TableFormatError(
                    'cannot parse {0!r} ({1})'.format(raw, exc), row=row_number, column=column.name
                )
        row = self.row_class(**values)
        self.validate(row, row_number)
        return row

    def render_row(self, row):
        """Render a row as a list of strings in canonical column order."""
        return [column.render(getattr(row, column.field)) for column in self.columns]

    def validate(self, row, row_number):
        """Check one row, attaching the row number to any error."""
        if self.check_row is None:
            return
        try:
            self.check_row(row)
        except TableFormatError as exc:
            raise TableFormatError(exc.args[0], row=row_number, column=exc.column)

    def validate_table(self, rows):
        """Check the invariants that span several rows."""
        if self.check_table is not None:
            self.check_table(rows)

    def __repr__(self):
        return 'Schema({0})'.format(self.name)


def _require(condition, message, column=None):
    if not condition:
        raise TableFormatError(message, column=column)


def _check_road_network_row(row):
    try:
        _upstream, downstream = split_road_id(row.road_id)
    except ValueError as exc:
        raise TableFormatError(str(exc), column='ROADID')
    _require(row.lane_count >= 1, 'LANENUM must be at least 1', 'LANENUM')
    _require(row.length > 0, 'LEN must be positive', 'LEN')
    _require(len(row.turns) == len(row.downstream_roads), 'token count mismatch between TURN and DN_ROAD', 'TURN')
    for turn in row.turns:
        _require(turn in TURN_CODES, 'unknown turn code {0!r}'.format(turn), 'TURN')
    for next_road in row.downstream_roads:
        try:
            next_upstream, _next_downstream = split_road_id(next_road)
        except ValueError as exc:
            raise TableFormatError(str(exc), column='DN_ROAD')
        _require(
            next_upstream == downstream,
            'downstream road {0} does not start at junction {1}'.format(next_road, downstream),
            'DN_ROAD'
        )


def _check_loop_row(row):
    _require(row.interval > 0, 'INT must be positive', 'INT')
    for column, value in (('COUNT', row.count), ('REG_COUNT', row.regular_count), ('LAR_COUNT', row.large_count)):
        _require(value >= 0, 'negative count', column)
    _require(row.count == row.regular_count + row.large_count, 'COUNT must equal REG_COUNT + LAR_COUNT', 'COUNT')
    _require(abs((row.to_time - row.from_time) - row.interval) < TOLERANCE, 'TTIME - FTIME must equal INT', 'TTIME')
    _require(row.arithmetic_speed >= 0, 'negative speed', 'ARTH_SPD')
    _require(row.harmonic_speed >= 0, 'negative speed', 'HARM_SPD')
    if row.count >= 1:
        _require(
            row.harmonic_speed <= row.arithmetic_speed + TOLERANCE,
            'HARM_SPD exceeds ARTH_SPD', 'HARM_SPD'
        )
    _require(row.turn in MEASURED_TURN_CODES, 'unknown turn code {0!r}'.format(row.turn), 'TURN')


def _check_interval_row(row, column):
    _require(row.interval > 0, 'INT must be positive', 'INT')
    _require(abs((row.to_time - row.from_time) - row.interval) < TOLERANCE, 'TTIME - FTIME must equal INT', 'TTIME')
    _check_road_id(row.road_id, column)


def _check_segment_row(row):
    _check_interval_row(row, 'ROAD_ID')
    _require(row.density >= 0, 'negative density', 'DENSITY')
    _require(row.speed is None or row.speed >= 0, 'negative speed', 'SPD')
    _require(row.travel_count >= 0, 'negative count', 'TT_COUNT')
    _require((row.travel_time is None) == (row.travel_count == 0), 'TT is set exactly when TT_COUNT is positive', 'TT')


def _check_occupancy_row(row):
    _check_interval_row(row, 'ROAD_ID')
    _require(0 <= row.occupancy <= 100 + TOLERANCE, 'OCC must lie in [0, 100]', 'OCC')


def _check_fcd_row(row):
    _require(row.vehicle_type in VEHICLE_TYPES, 'TYPE must be 1 or 2', 'TYPE')
    _require(row.speed >= 0, 'negative speed', 'SPD')
    _require(row.distance >= 0, 'negative distance', 'DIS')
    _require(row.turn in MEASURED_TURN_CODES, 'unknown turn code {0!r}'.format(row.turn), 'TURN')
    _check_road_id(row.road_id, 'ROADID')


def _check_road_id(road_id, column):
    try:
        split_road_id(road_id)
    except ValueError as exc:
        raise TableFormatError(str(exc), column=column)


def _check_lpr_row(row):
    _check_road_id(row.from_road, 'FROAD')
    _check_road_id(row.to_road, 'TROAD')
    _require(row.from_time <= row.to_time, 'FTIME is later than TTIME', 'TTIME')


def _check_signal_plan_row(row):
    _require(row.turn in TURN_CODES, 'unknown turn code {0!r}'.format(row.turn), 'TURN')
    _require(row.green_start < row.green_end, 'GREEN_START must precede GREEN_END', 'GREEN_END')


def _check_signal_plan_table(rows):
    last_end = {}
    for index, row in enumerate(rows, start=1):
        key = (row.node_id, row.approach, row.turn)
        previous_end = last_end.get(key)
        if previous_end is not None and row.green_start < previous_end:
            raise TableFormatError('phases of {0} overlap or are out of order'.format(key), row=index)
        last_end[key] = row.green_end


def _check_vehicle_row(row):
    _require(row.vehicle_type in VEHICLE_TYPES, 'TYPE must be 1 or 2', 'TYPE')


def _check_trip_row(row):
    _require(row.seq >= 0, 'SEQ must not be negative', 'SEQ')
    _require(row.source in (OBSERVED, INFERRED), 'unknown source {0!r}'.format(row.source), 'SOURCE')
    if row.green_start is not None and row.green_end is not None:
        _require(row.green_start <= row.green_end, 'G_START is later than G_END', 'G_END')


def _check_trip_part_row(row):
    _require(row.part >= 0, 'PART must not be negative', 'PART')
    _require(row.kind in (ON_FSRN, INNER_ZONE), 'unknown part kind {0!r}'.format(row.kind), 'KIND')
    _require((row.zone_id is None) == (row.kind == ON_FSRN), 'ZONEID is set exactly on inner-zone parts', 'ZONEID')
    _require(len(row.nodes) >= 1, 'a part needs at least one node', 'NODES')


def _check_trajectory_row(row):
    _require(row.vehicle_type in VEHICLE_TYPES, 'TYPE must be 1 or 2', 'TYPE')
    _require(row.seq >= 0, 'SEQ must not be negative', 'SEQ')
    _require(row.position >= 0, 'negative position', 'POS')
    _require(row.turn in MEASURED_TURN_CODES, 'unknown turn code {0!r}'.format(row.turn), 'TURN')
    _check_road_id(row.road_id, 'ROADID')


ROAD_NETWORK = Schema('road_network', [
    Column('ROADID', 'road_id'),
    _integer_column('LANENUM', 'lane_count'),
    _tokens_column('TURN', 'turns'),
    _tokens_column('DN_ROAD', 'downstream_roads'),
    Column('GEOM', 'geometry'),
    _float_column('LEN', 'length'),
], check_row=_check_road_network_row)

LOOP = Schema('loop', [
    Column('ROAD_ID', 'road_id'),
    _timestamp_column('FTIME', 'from_time'),
    _timestamp_column('TTIME', 'to_time'),
    _integer_column('INT', 'interval'),
    _integer_column('COUNT', 'count'),
    _integer_column('REG_COUNT', 'regular_count'),
    _integer_column('LAR_COUNT', 'large_count'),
    _float_column('ARTH_SPD', 'arithmetic_speed'),
    _float_column('HARM_SPD', 'harmonic_speed'),
    Column('TURN', 'turn'),
], check_row=_check_loop_row)

FCD = Schema('fcd', [
    Column('VID', 'vehicle_id'),
    _integer_column('TYPE', 'vehicle_type'),
    _timestamp_column('TIME', 'time'),
    _float_column('LON', 'lon'),
    _float_column('LAT', 'lat'),
    _float_column('SPD', 'speed'),
    Column('TURN', 'turn'),
    _float_column('DIS', 'distance'),
    Column('ROADID', 'road_id'),
], check_row=_check_fcd_row)

SEGMENT = Schema('segment', [
    Column('ROAD_ID', 'road_id'),
    _timestamp_column('FTIME', 'from_time'),
    _timestamp_column('TTIME', 'to_time'),
    _integer_column('INT', 'interval'),
    _float_column('DENSITY', 'density'),
    Column('SPD', 'speed', parse=_optional(float), render=_render_optional(format_float)),
    _integer_column('TT_COUNT', 'travel_count'),
    Column('TT', 'travel_time', parse=_optional(float), render=_render_optional(format_float)),
], check_row=_check_segment_row)
"""Segment probe rows: DENSITY in veh/km at FTIME, space-mean SPD in km/h and mean TT in seconds."""

OCCUPANCY = Schema('occupancy', [
    Column('ROAD_ID', 'road_id'),
    _timestamp_column('FTIME', 'from_time'),
    _timestamp_column('TTIME', 'to_time'),
    _integer_column('INT', 'interval'),
    _float_column('OCC', 'occupancy'),
], check_row=_check_occupancy_row)
"""Loop occupancy in percent of each interval."""

LPR = Schema('lpr', [
    Column('VID', 'vehicle_id'),
    Column('FROAD', 'from_road'),
    Column('TROAD', 'to_road'),
    _timestamp_column('FTIME', 'from_time'),
    _timestamp_column('TTIME', 'to_time'),
], check_row=_check_lpr_row)

SIGNAL_PLAN = Schema('signal_plan', [
    Column('NODEID', 'node_id'),
    Column('APPROACH', 'approach'),
    Column('TURN', 'turn'),
    _timestamp_column('GREEN_START', 'green_start'),
    _timestamp_column('GREEN_END', 'green_end'),
], check_row=_check_signal_plan_row, check_table=_check_signal_plan_table)

NODE = Schema('node', [
    Column('NODEID', 'node_id'),
    Column('AVI', 'avi', parse=_flag, render=_render_flag),
    _float_column('LON', 'lon'),
    _float_column('LAT', 'lat'),
])

VEHICLE = Schema('vehicle', [
    Column('VID', 'vehicle_id'),
    _integer_column('TYPE', 'vehicle_type'),
], check_row=_check_vehicle_row)

TRIP = Schema('trip', [
    Column('VID', 'vehicle_id'),
    _integer_column('TRIP', 'trip'),
    _integer_column('SEQ', 'seq'),
    Column('NODEID', 'node_id'),
    Column('SOURCE', 'source'),
    _timestamp_column('TIME', 'time'),
    Column('G_START', 'green_start', parse=_optional(parse_timestamp), render=_render_optional(format_timestamp)),
    Column('G_END', 'green_end', parse=_optional(parse_timestamp), render=_render_optional(format_timestamp)),
    _tokens_column('FLAGS', 'flags'),
], check_row=_check_trip_row)

TRIP_PART = Schema('trip_part', [
    Column('VID', 'vehicle_id'),
    _integer_column('TRIP', 'trip'),
    _integer_column('PART', 'part'),
    Column('KIND', 'kind'),
    Column('ZONEID', 'zone_id', parse=_optional(_text), render=_render_optional(str)),
    _tokens_column('NODES', 'nodes'),
], check_row=_check_trip_part_row)

TRAJECTORY = Schema('trajectory', [
    Column('VID', 'vehicle_id'),
    _integer_column('TYPE', 'vehicle_type'),
    Column('ROADID', 'road_id'),
    Column('TURN', 'turn'),
    _integer_column('SEQ', 'seq'),
    _timestamp_column('TIME', 'time'),
    _float_column('POS', 'position'),
    Column('QUEUED', 'queued', parse=_flag, render=_render_flag),
], check_row=_check_trajectory_row)

SCHEMAS = dict((schema.name, schema) for schema in (
    ROAD_NETWORK, LOOP, FCD, SEGMENT, OCCUPANCY, LPR, SIGNAL_PLAN, NODE, VEHICLE, TRIP, TRIP_PART, TRAJECTORY
))

RoadNetworkRow = ROAD_NETWORK.row_class
LoopRow = LOOP.row_class
FcdRow = FCD.row_class
SegmentRow = SEGMENT.row_class
OccupancyRow = OCCUPANCY.row_class
LprRow = LPR.row_class
SignalPlanRow = SIGNAL_PLAN.row_class
NodeRow = NODE.row_class
VehicleRow = VEHICLE.row_class
TripRow = TRIP.row_class
TripPartRow = TRIP_PART.row_class
TrajectoryRow = TRAJECTORY.row_class


def read_table(schema, source):
    """
    Parse a table file.

    Args:
        schema (Schema): The expected layout.
        source: A text file-like object (or any iterable of lines).

    Returns:
        A list of validated rows, in file order.

    Raises:
        TableFormatError: naming the row number (1 is the first data row) and column.
    """
    reader = csv.DictReader(source, dialect=DIALECT)
    header = reader.fieldnames or []
    expected = set(schema.header)
    missing = [name for name in schema.header if name not in header]
    if missing:
        raise TableFormatError('missing column(s) in {0} table'.format(schema.name), column=missing[0])
    unexpected = [name for name in header if name not in expected]
    if unexpected:
        raise TableFormatError('unexpected column(s) in {0} table'.format(schema.name), column=unexpected[0])
    if len(header) != len(set(header)):
        raise TableFormatError('duplicate column in {0} table'.format(schema.name))

    rows = []
    for row_number, record in enumerate(reader, start=1):
        if None in record or any(value is None for value in record.values()):
            raise TableFormatError('wrong number of fields', row=row_number)
        rows.append(schema.parse_row(record, row_number))

    schema.validate_table(rows)
    log.debug('Read %d %s rows', len(rows), schema.name)
    return rows


def write_table(schema, rows, output_file):
    """
    Write rows in canonical column order, preceded by the header.

    Every row is validated before anything is written, so an invalid row
    set leaves `output_file` untouched.
    """
    rows = list(rows)
    for row_number, row in enumerate(rows, start=1):
        schema.validate(row, row_number)
    schema.validate_table(rows)

    rendered = [schema.render_row(row) for row in rows]
    writer = csv.writer(output_file, dialect=DIALECT)
    writer.writerow(schema.header)
    writer.writerows(rendered)


def table_to_string(schema, rows):
    """Render a table into a string, see `write_table`."""
    output = StringIO()
    write_table(schema, rows, output)
    return output.getvalue()


def read_table_from_string(schema, text):
    """Parse a table held in a string, see `read_table`."""
    return read_table(schema, StringIO(text))
