"""
Parse measurement properties files.

A properties file holds `key=value` lines; loop detectors and segment probes
are declared as numbered groups::

    fTime=2020-09-01 08:00:00
    tTime=2020-09-01 09:00:00
    needFCD=true
    fcdSamplingSec=10
    loop.1.loopId=L1
    loop.1.ftNode=N0_N1
    loop.1.position=50
    loop.1.missingRate=0.05
    loop.1.interval=300
    segment.1.segmentId=S1
    segment.1.ftNode=N0_N1
    segment.1.interval=300

Key names are case-sensitive.
"""

import configparser
import hashlib
import logging
import re
from collections import namedtuple

from holo.traffic.tasks import ingest
from holo.traffic.tasks.exceptions import ConfigurationError

log = logging.getLogger(__name__)

SECTION = 'measure'
GROUP_KEY_PATTERN = re.compile(r'^(?P<kind>loop|segment)\.(?P<group>[^.]+)\.(?P<name>[A-Za-z]+)$')

LOOP_KEYS = ('loopId', 'ftNode', 'position', 'missingRate', 'interval')
SEGMENT_KEYS = ('segmentId', 'ftNode', 'interval')
GROUP_KEYS = {'loop': LOOP_KEYS, 'segment': SEGMENT_KEYS}
GLOBAL_KEYS = ('fTime', 'tTime', 'needFCD', 'fcdSamplingSec', 'seed', 'outputDir', 'fcdPenetration', 'hashSalt')
REQUIRED_KEYS = ('fTime', 'tTime')
DEFAULT_FCD_SAMPLING_SEC = 10.0

LoopSpec = namedtuple('LoopSpec', ['loop_id', 'road_id', 'position', 'missing_rate', 'interval'])

SegmentSpec = namedtuple('SegmentSpec', ['segment_id', 'road_id', 'interval'])
"""A segment probe measuring density, space-mean speed and travel time on one segment."""

MeasurementProperties = namedtuple('MeasurementProperties', [
    'from_time', 'to_time', 'need_fcd', 'fcd_sampling_sec', 'loops', 'segments', 'seed', 'output_dir',
    'fcd_penetration', 'hash_salt', 'digest',
])


def _number(key, value, convert=float):
    try:
        return convert(value)
    except ValueError:
        raise ConfigurationError('property {0} has invalid value {1!r}'.format(key, value))


def _boolean(key, value):
    lowered = value.strip().lower()
    if lowered not in ('true', 'false'):
        raise ConfigurationError('property {0} must be true or false, got {1!r}'.format(key, value))
    return lowered == 'true'


def _timestamp(key, value):
    try:
        return ingest.parse_timestamp(value.strip())
    except ValueError:
        raise ConfigurationError('property {0} is not a timestamp: {1!r}'.format(key, value))


def read_properties_items(text):
    """Return the (key, value) pairs of a properties text in file order."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=('=',), comment_prefixes=('#', '!'))
    parser.optionxform = str
    try:
        parser.read_string(u'[{0}]\n{1}'.format(SECTION, text))
    except configparser.Error as exc:
        raise ConfigurationError('malformed properties file: {0}'.format(exc))
    return [(key, value.strip()) for key, value in parser.items(SECTION)]


def _complete_groups(groups, kind):
    """The (group, values) pairs of one kind in numeric order, each holding every key of its kind."""
    found = groups[kind]
    for group in sorted(found, key=lambda name: (len(name), name)):
        for name in GROUP_KEYS[kind]:
            if name not in found[group]:
                raise ConfigurationError('missing property key {0}.{1}.{2}'.format(kind, group, name))
        yield group, found[group]


def parse_properties(text):
    """
    Parse a measurement properties file.

    Raises:
        ConfigurationError: on an unknown key, a missing key or an invalid value.  The
            message names the offending key.
    """
    values = {}
    groups = {'loop': {}, 'segment': {}}
    for key, value in read_properties_items(text):
        match = GROUP_KEY_PATTERN.match(key)
        if match:
            kind = match.group('kind')
            if match.group('name') not in GROUP_KEYS[kind]:
                raise ConfigurationError('unknown property key {0}'.format(key))
            groups[kind].setdefault(match.group('group'), {})[match.group('name')] = value
        elif key in GLOBAL_KEYS:
            values[key] = value
        else:
            raise ConfigurationError('unknown property key {0}'.format(key))

    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigurationError('missing property key {0}'.format(key))
    from_time = _timestamp('fTime', values['fTime'])
    to_time = _timestamp('tTime', values['tTime'])
    if not from_time < to_time:
        raise ConfigurationError('property fTime must precede tTime')

    loops = []
    for group, spec in _complete_groups(groups, 'loop'):
        prefix = 'loop.{0}.'.format(group)
        loop = LoopSpec(
            loop_id=spec['loopId'],
            road_id=spec['ftNode'],
            position=_number(prefix + 'position', spec['position']),
            missing_rate=_number(prefix + 'missingRate', spec['missingRate']),
            interval=_number(prefix + 'interval', spec['interval'], int),
        )
        if not 0 <= loop.missing_rate <= 1:
            raise ConfigurationError('property {0}missingRate must lie in [0, 1]'.format(prefix))
        if loop.interval <= 0:
            raise ConfigurationError('property {0}interval must be positive'.format(prefix))
        if loop.position < 0:
            raise ConfigurationError('property {0}position must not be negative'.format(prefix))
        loops.append(loop)
    if len(set(loop.loop_id for loop in loops)) != len(loops):
        raise ConfigurationError('loopId values must be unique')

    segments = []
    for group, spec in _complete_groups(groups, 'segment'):
        prefix = 'segment.{0}.'.format(group)
        segment = SegmentSpec(
            segment_id=spec['segmentId'],
            road_id=spec['ftNode'],
            interval=_number(prefix + 'interval', spec['interval'], int),
        )
        if segment.interval <= 0:
            raise ConfigurationError('property {0}interval must be positive'.format(prefix))
        segments.append(segment)
    # Every detector writes <id>.csv into the same directory.
    detector_ids = [loop.loop_id for loop in loops] + [segment.segment_id for segment in segments]
    if len(set(detector_ids)) != len(detector_ids):
        raise ConfigurationError('segmentId values must be unique and differ from every loopId')

    need_fcd = _boolean('needFCD', values.get('needFCD', 'false'))
    sampling = _number('fcdSamplingSec', values.get('fcdSamplingSec', str(DEFAULT_FCD_SAMPLING_SEC)))
    if need_fcd and not sampling > 0:
        raise ConfigurationError('property fcdSamplingSec must be positive')
    penetration = values.get('fcdPenetration')
    if penetration is not None:
        penetration = _number('fcdPenetration', penetration)
        if not 0 < penetration <= 1:
            raise ConfigurationError('property fcdPenetration must lie in (0, 1]')
    seed = values.get('seed')
    properties = MeasurementProperties(
        from_time=from_time,
        to_time=to_time,
        need_fcd=need_fcd,
        fcd_sampling_sec=sampling,
        loops=loops,
        segments=segments,
        seed=None if seed is None else _number('seed', seed, int),
        output_dir=values.get('outputDir'),
        fcd_penetration=penetration,
        hash_salt=values.get('hashSalt'),
        digest=hashlib.sha1(text.encode('utf-8')).hexdigest(),
    )
    log.debug('Parsed properties with %d loops, %d segment probes, needFCD=%s', len(loops), len(segments), need_fcd)
    return properties


def load_properties(properties_file):
    return parse_properties(properties_file.read())
