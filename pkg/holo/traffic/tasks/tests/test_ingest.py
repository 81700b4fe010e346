"""Tests for the table readers and writers."""

import random
from io import StringIO

from holo.traffic.tasks import ingest
from holo.traffic.tasks.exceptions import TableFormatError
from holo.traffic.tasks.tests import unittest


LOOP_HEADER = 'ROAD_ID,FTIME,TTIME,INT,COUNT,REG_COUNT,LAR_COUNT,ARTH_SPD,HARM_SPD,TURN\n'
LOOP_LINE = 'A_B,2020-09-01 08:00:00,2020-09-01 08:05:00,300,3,2,1,32.500,30.100,S\n'

ROAD_HEADER = 'ROADID,LANENUM,TURN,DN_ROAD,GEOM,LEN\n'


class TimestampTestCase(unittest.TestCase):
    """Tests for timestamp conversion."""

    def test_whole_seconds(self):
        seconds = ingest.parse_timestamp('2020-09-01 08:00:00')
        self.assertEqual(seconds, 1598947200.0)
        self.assertEqual(ingest.format_timestamp(seconds), '2020-09-01 08:00:00')

    def test_fractional_seconds(self):
        self.assertEqual(ingest.format_timestamp(1598947200.25), '2020-09-01 08:00:00.250')
        self.assertEqual(ingest.parse_timestamp('2020-09-01 08:00:00.250'), 1598947200.25)

    def test_rounds_to_milliseconds(self):
        self.assertEqual(ingest.format_timestamp(1598947200.9996), '2020-09-01 08:00:01')

    def test_float_rendering(self):
        self.assertEqual(ingest.format_float(40.0 / 3), '13.333')
        self.assertEqual(ingest.format_float(0), '0.000')


class RoadIdTestCase(unittest.TestCase):
    """Tests for ROADID handling."""

    def test_split(self):
        self.assertEqual(ingest.split_road_id('N1_N2'), ('N1', 'N2'))
        self.assertEqual(ingest.make_road_id('N1', 'N2'), 'N1_N2')

    def test_malformed(self):
        for road_id in ('N1', 'N1_N1', '_N2', 'a_b_c'):
            with self.assertRaises(ValueError):
                ingest.split_road_id(road_id)


class ReadTableTestCase(unittest.TestCase):
    """Tests for read_table()."""

    def read(self, schema, text):
        return ingest.read_table(schema, StringIO(text))

    def test_valid_loop_row(self):
        rows = self.read(ingest.LOOP, LOOP_HEADER + LOOP_LINE)
        self.assertEqual(len(rows), 1)
        row = rows[0]
        self.assertEqual(row.road_id, 'A_B')
        self.assertEqual(row.count, row.regular_count + row.large_count)
        self.assertEqual(row.interval, 300)
        self.assertAlmostEqual(row.harmonic_speed, 30.1)

    def test_columns_in_any_order(self):
        text = 'VID,TTIME,FTIME,TROAD,FROAD\nv1,2020-09-01 08:01:00,2020-09-01 08:00:00,B_C,A_B\n'
        row = self.read(ingest.LPR, text)[0]
        self.assertEqual((row.from_road, row.to_road), ('A_B', 'B_C'))
        self.assertEqual(row.to_time - row.from_time, 60)

    def test_count_mismatch(self):
        line = LOOP_LINE.replace(',3,2,1,', ',4,2,1,')
        with self.assertRaisesRegex(TableFormatError, 'row 2, column COUNT'):
            self.read(ingest.LOOP, LOOP_HEADER + LOOP_LINE + line)

    def test_row_number_reported(self):
        line = LOOP_LINE.replace(',3,2,1,', ',4,2,1,')
        with self.assertRaises(TableFormatError) as context:
            self.read(ingest.LOOP, LOOP_HEADER + LOOP_LINE + line)
        self.assertEqual(context.exception.row, 2)
        self.assertEqual(context.exception.column, 'COUNT')

    def test_interval_mismatch(self):
        line = LOOP_LINE.replace('08:05:00', '08:04:00')
        with self.assertRaisesRegex(TableFormatError, 'TTIME - FTIME'):
            self.read(ingest.LOOP, LOOP_HEADER + line)

    def test_harmonic_above_arithmetic(self):
        line = LOOP_LINE.replace('32.500,30.100', '30.100,32.500')
        with self.assertRaisesRegex(TableFormatError, 'HARM_SPD'):
            self.read(ingest.LOOP, LOOP_HEADER + line)

    def test_token_count_mismatch(self):
        text = ROAD_HEADER + 'A_B,2,S#L,B_C#B_D#B_E,"LINESTRING (0 0, 1 1)",250.000\n'
        with self.assertRaisesRegex(TableFormatError, 'token count mismatch'):
            self.read(ingest.ROAD_NETWORK, text)

    def test_downstream_road_must_leave_junction(self):
        text = ROAD_HEADER + 'A_B,2,S,C_D,"LINESTRING (0 0, 1 1)",250.000\n'
        with self.assertRaisesRegex(TableFormatError, 'DN_ROAD'):
            self.read(ingest.ROAD_NETWORK, text)

    def test_road_lists(self):
        text = ROAD_HEADER + 'A_B,2,S#L,B_C#B_D,"LINESTRING (0 0, 1 1)",250.000\n'
        row = self.read(ingest.ROAD_NETWORK, text)[0]
        self.assertEqual(row.turns, ('S', 'L'))
        self.assertEqual(row.downstream_roads, ('B_C', 'B_D'))
        self.assertEqual(row.geometry, 'LINESTRING (0 0, 1 1)')

    def test_missing_column(self):
        with self.assertRaisesRegex(TableFormatError, 'column TURN'):
            self.read(ingest.LOOP, LOOP_HEADER.replace(',TURN', '') + LOOP_LINE.replace(',S\n', '\n'))

    def test_unexpected_column(self):
        with self.assertRaisesRegex(TableFormatError, 'column EXTRA'):
            self.read(ingest.VEHICLE, 'VID,TYPE,EXTRA\nv1,2,x\n')

    def test_unparseable_field(self):
        with self.assertRaisesRegex(TableFormatError, 'row 1, column INT'):
            self.read(ingest.LOOP, LOOP_HEADER + LOOP_LINE.replace(',300,', ',five,'))

    def test_short_row(self):
        with self.assertRaisesRegex(TableFormatError, 'wrong number of fields'):
            self.read(ingest.VEHICLE, 'VID,TYPE\nv1\n')

    def test_lpr_order(self):
        text = 'VID,FROAD,TROAD,FTIME,TTIME\nv1,A_B,B_C,2020-09-01 08:01:00,2020-09-01 08:00:00\n'
        with self.assertRaisesRegex(TableFormatError, 'FTIME is later'):
            self.read(ingest.LPR, text)

    def test_overlapping_signal_phases(self):
        text = (
            'NODEID,APPROACH,TURN,GREEN_START,GREEN_END\n'
            'B,A,S,2020-09-01 08:00:00,2020-09-01 08:00:30\n'
            'B,A,L,2020-09-01 08:00:10,2020-09-01 08:00:20\n'
            'B,A,S,2020-09-01 08:00:20,2020-09-01 08:01:00\n'
        )
        with self.assertRaisesRegex(TableFormatError, 'row 3'):
            self.read(ingest.SIGNAL_PLAN, text)

    def test_fcd_type(self):
        text = 'VID,TYPE,TIME,LON,LAT,SPD,TURN,DIS,ROADID\nab,3,2020-09-01 08:00:00,118.1,30.9,20.0,S,10.0,A_B\n'
        with self.assertRaisesRegex(TableFormatError, 'column TYPE'):
            self.read(ingest.FCD, text)

    def test_single_field_corruptions_rejected(self):
        corruptions = {
            'INT': 'x', 'COUNT': '-1', 'REG_COUNT': '9', 'FTIME': '2020-13-01 00:00:00',
            'TTIME': 'noon', 'ARTH_SPD': 'fast', 'HARM_SPD': '99.000', 'TURN': 'X',
        }
        header = LOOP_HEADER.strip().split(',')
        values = LOOP_LINE.strip().split(',')
        for column, corrupted in corruptions.items():
            broken = list(values)
            broken[header.index(column)] = corrupted
            with self.assertRaises(TableFormatError):
                self.read(ingest.LOOP, LOOP_HEADER + ','.join(broken) + '\n')


class WriteTableTestCase(unittest.TestCase):
    """Tests for write_table()."""

    def setUp(self):
        self.random = random.Random(20200901)

    def random_time(self):
        return 1598918400 + self.random.randint(0, 86400) + self.random.choice([0, 0.5, 0.125])

    def test_header_only(self):
        self.assertEqual(ingest.table_to_string(ingest.LPR, []), 'VID,FROAD,TROAD,FTIME,TTIME\n')

    def test_float_formatting(self):
        row = ingest.FcdRow('ab12', 2, 1598947200.0, 118.75, 30.9, 40.0 / 3, 'S', 100.0, 'A_B')
        text = ingest.table_to_string(ingest.FCD, [row])
        self.assertIn(',13.333,', text)
        self.assertIn('2020-09-01 08:00:00', text)

    def test_refuses_invalid_rows(self):
        output = StringIO()
        rows = [
            ingest.LprRow('v1', 'A_B', 'B_C', 100.0, 200.0),
            ingest.LprRow('v2', 'A_B', 'B_C', 300.0, 200.0),
        ]
        with self.assertRaises(TableFormatError):
            ingest.write_table(ingest.LPR, rows, output)
        self.assertEqual(output.getvalue(), '')

    def assert_round_trip(self, schema, rows):
        text = ingest.table_to_string(schema, rows)
        self.assertEqual(ingest.read_table_from_string(schema, text), rows)
        self.assertEqual(ingest.table_to_string(schema, rows), text)

    def test_round_trip_lpr(self):
        rows = []
        for index in range(50):
            start = self.random_time()
            rows.append(ingest.LprRow('v{0}'.format(index), 'A_B', 'B_C', start, start + self.random.randint(0, 900)))
        self.assert_round_trip(ingest.LPR, rows)

    def test_round_trip_loop(self):
        rows = []
        for _ in range(50):
            start = 1598918400 + 300 * self.random.randint(0, 287)
            regular, large = self.random.randint(0, 40), self.random.randint(0, 5)
            harmonic_millis = self.random.randint(0, 60000)
            rows.append(ingest.LoopRow(
                'A_B', start, start + 300, 300, regular + large, regular, large,
                (harmonic_millis + self.random.randint(0, 5000)) / 1000.0, harmonic_millis / 1000.0,
                self.random.choice(ingest.MEASURED_TURN_CODES),
            ))
        self.assert_round_trip(ingest.LOOP, rows)

    def test_round_trip_road_network(self):
        rows = [
            ingest.RoadNetworkRow('A_B', 2, ('S', 'L'), ('B_C', 'B_D'), 'LINESTRING (0 0, 1 0)', 250.125),
            ingest.RoadNetworkRow('B_C', 1, (), (), 'LINESTRING (1 0, 2 0)', 300.0),
        ]
        self.assert_round_trip(ingest.ROAD_NETWORK, rows)

    def test_round_trip_fcd(self):
        rows = [
            ingest.FcdRow(
                'c0ffee{0:02d}'.format(index), self.random.choice(ingest.VEHICLE_TYPES), self.random_time(),
                (118000 + self.random.randint(0, 999)) / 1000.0, (30000 + self.random.randint(0, 999)) / 1000.0,
                self.random.randint(0, 80000) / 1000.0, 'Unknown', self.random.randint(0, 500000) / 1000.0, 'A_B',
            )
            for index in range(30)
        ]
        self.assert_round_trip(ingest.FCD, rows)

    def test_round_trip_signal_plan(self):
        rows = []
        for cycle in range(20):
            start = 1598947200 + 90 * cycle
            rows.append(ingest.SignalPlanRow('B', 'A', 'S', start, start + 40.5))
        self.assert_round_trip(ingest.SIGNAL_PLAN, rows)

    def test_round_trip_trip_and_trajectory(self):
        trips = [
            ingest.TripRow('v1', 0, 0, 'A', ingest.OBSERVED, 100.0, None, None, ()),
            ingest.TripRow('v1', 0, 1, 'B', ingest.INFERRED, 130.5, 120.0, 160.0, ('multiple_chains',)),
        ]
        self.assert_round_trip(ingest.TRIP, trips)
        points = [
            ingest.TrajectoryRow('v1', 2, 'A_B', 'S', 0, 100.0, 0.0, False),
            ingest.TrajectoryRow('v1', 2, 'A_B', 'S', 1, 118.25, 245.5, True),
        ]
        self.assert_round_trip(ingest.TRAJECTORY, points)
