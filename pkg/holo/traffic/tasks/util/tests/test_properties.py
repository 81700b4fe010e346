"""Tests for measurement properties parsing."""

from holo.traffic.tasks import ingest
from holo.traffic.tasks.exceptions import ConfigurationError
from holo.traffic.tasks.tests import unittest
from holo.traffic.tasks.util import properties
from holo.traffic.tasks.util.properties import LoopSpec, SegmentSpec

PROPERTIES = """
# morning peak
fTime=2020-09-01 08:00:00
tTime=2020-09-01 09:00:00
needFCD=true
fcdSamplingSec=10
seed=3
loop.1.loopId=L1
loop.1.ftNode=N0_N1
loop.1.position=50
loop.1.missingRate=0.05
loop.1.interval=300
loop.2.loopId=L2
loop.2.ftNode=N1_N2
loop.2.position=0
loop.2.missingRate=0
loop.2.interval=60
"""


class ParsePropertiesTestCase(unittest.TestCase):
    """Tests for parse_properties."""

    def test_parse(self):
        parsed = properties.parse_properties(PROPERTIES)
        self.assertEqual(parsed.from_time, ingest.parse_timestamp('2020-09-01 08:00:00'))
        self.assertEqual(parsed.to_time - parsed.from_time, 3600.0)
        self.assertTrue(parsed.need_fcd)
        self.assertEqual(parsed.fcd_sampling_sec, 10.0)
        self.assertEqual(parsed.seed, 3)
        self.assertIsNone(parsed.output_dir)
        self.assertEqual(parsed.loops, [
            LoopSpec('L1', 'N0_N1', 50.0, 0.05, 300),
            LoopSpec('L2', 'N1_N2', 0.0, 0.0, 60),
        ])

    def test_digest_is_stable(self):
        self.assertEqual(properties.parse_properties(PROPERTIES).digest,
                         properties.parse_properties(PROPERTIES).digest)

    def test_groups_in_numeric_order(self):
        text = PROPERTIES.replace('loop.1.', 'loop.10.')
        self.assertEqual([loop.loop_id for loop in properties.parse_properties(text).loops], ['L2', 'L1'])

    def test_defaults(self):
        parsed = properties.parse_properties('fTime=2020-09-01 08:00:00\ntTime=2020-09-01 09:00:00\n')
        self.assertFalse(parsed.need_fcd)
        self.assertEqual(parsed.fcd_sampling_sec, properties.DEFAULT_FCD_SAMPLING_SEC)
        self.assertEqual(parsed.loops, [])
        self.assertEqual(parsed.segments, [])
        self.assertIsNone(parsed.seed)

    def test_unknown_key(self):
        with self.assertRaisesRegex(ConfigurationError, 'unknown property key needFcd'):
            properties.parse_properties(PROPERTIES + 'needFcd=false\n')

    def test_unknown_loop_key(self):
        with self.assertRaisesRegex(ConfigurationError, 'loop.1.speed'):
            properties.parse_properties(PROPERTIES + 'loop.1.speed=3\n')

    def test_incomplete_loop(self):
        with self.assertRaisesRegex(ConfigurationError, 'loop.3.ftNode'):
            properties.parse_properties(PROPERTIES + 'loop.3.loopId=L3\n')

    def test_missing_window(self):
        with self.assertRaisesRegex(ConfigurationError, 'tTime'):
            properties.parse_properties('fTime=2020-09-01 08:00:00\n')

    def test_reversed_window(self):
        with self.assertRaises(ConfigurationError):
            properties.parse_properties('fTime=2020-09-01 09:00:00\ntTime=2020-09-01 08:00:00\n')

    def test_invalid_values(self):
        for old, new in (
                ('needFCD=true', 'needFCD=yes'),
                ('loop.1.missingRate=0.05', 'loop.1.missingRate=1.5'),
                ('loop.1.interval=300', 'loop.1.interval=0'),
                ('loop.1.position=50', 'loop.1.position=fifty'),
                ('loop.2.loopId=L2', 'loop.2.loopId=L1'),
        ):
            with self.assertRaises(ConfigurationError):
                properties.parse_properties(PROPERTIES.replace(old, new))

    def test_duplicate_key(self):
        with self.assertRaises(ConfigurationError):
            properties.parse_properties(PROPERTIES + 'seed=4\n')


SEGMENTS = """
segment.1.segmentId=S1
segment.1.ftNode=N0_N1
segment.1.interval=300
segment.2.segmentId=S2
segment.2.ftNode=N1_N2
segment.2.interval=60
"""


class SegmentProbePropertiesTestCase(unittest.TestCase):
    """Tests for segment probe groups."""

    def test_parse(self):
        parsed = properties.parse_properties(PROPERTIES + SEGMENTS)
        self.assertEqual(parsed.segments, [SegmentSpec('S1', 'N0_N1', 300), SegmentSpec('S2', 'N1_N2', 60)])
        self.assertEqual(len(parsed.loops), 2)

    def test_unknown_segment_key(self):
        with self.assertRaisesRegex(ConfigurationError, 'segment.1.position'):
            properties.parse_properties(PROPERTIES + SEGMENTS + 'segment.1.position=3\n')

    def test_incomplete_segment(self):
        with self.assertRaisesRegex(ConfigurationError, 'segment.3.interval'):
            properties.parse_properties(PROPERTIES + SEGMENTS + 'segment.3.segmentId=S3\nsegment.3.ftNode=N0_N1\n')

    def test_invalid_values(self):
        for old, new in (
                ('segment.1.interval=300', 'segment.1.interval=0'),
                ('segment.1.interval=300', 'segment.1.interval=five'),
                ('segment.2.segmentId=S2', 'segment.2.segmentId=S1'),
                ('segment.2.segmentId=S2', 'segment.2.segmentId=L1'),
        ):
            with self.assertRaises(ConfigurationError):
                properties.parse_properties(PROPERTIES + SEGMENTS.replace(old, new))
