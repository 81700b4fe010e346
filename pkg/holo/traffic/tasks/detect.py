"""
Virtual traffic measurement over reconstructed trajectories.

Detectors read the trajectory store and never change it: loop detectors
count the trajectories crossing a line on a segment, segment probes measure
density and space-mean speed, and floating-car sampling resamples probe
vehicles at a fixed period under an irreversible ID.
"""

import hashlib
import logging
import math
import zlib
from collections import defaultdict, namedtuple

import luigi
import numpy as np
import yaml
from shapely import wkt

from holo.traffic.tasks import ingest, netmodel, reconstruct
from holo.traffic.tasks.exceptions import ConfigurationError, InputError
from holo.traffic.tasks.url import ExternalURL, get_target_from_url, url_path_join
from holo.traffic.tasks.util import properties
from holo.traffic.tasks.util.overwrite import OverwriteOutputMixin

log = logging.getLogger(__name__)

KMH_PER_MS = 3.6
DEFAULT_LOOP_LENGTH = 2.0
DEFAULT_VEHICLE_LENGTH = 4.5
DEFAULT_PENETRATION = 0.05
HASH_DIGEST_SIZE = 8


class LoopDetectorConfig(namedtuple('LoopDetectorConfig', [
        'loop_id', 'road_id', 'position', 'interval', 'missing_rate', 'from_time', 'to_time',
        'loop_length', 'vehicle_length', 'seed'])):
    """
    A virtual loop detector.

    `position` is measured in meters from the downstream end of the segment
    `road_id`; crossings are kept within [from_time, to_time).
    """

    __slots__ = ()

    @property
    def segment(self):
        return ingest.split_road_id(self.road_id)

    def validate(self, length=None):
        if not 0 <= self.missing_rate <= 1:
            raise ConfigurationError('missing rate of loop {0} must lie in [0, 1]'.format(self.loop_id))
        if not self.interval > 0:
            raise ConfigurationError('interval of loop {0} must be positive'.format(self.loop_id))
        if self.position < 0 or (length is not None and self.position > length):
            raise ConfigurationError('loop {0} lies outside its {1:.0f} m segment'.format(self.loop_id, length or 0))
        if not self.loop_length > 0:
            raise ConfigurationError('loop length must be positive')
        if not self.from_time < self.to_time:
            raise ConfigurationError('measurement window of loop {0} is empty'.format(self.loop_id))
        return self

    def detector_seed(self):
        """Seed of this detector's own random stream."""
        return [self.seed, zlib.crc32(self.loop_id.encode('utf-8'))]


FcdConfig = namedtuple('FcdConfig', [
    'sample_period', 'probe_vehicle_ids', 'penetration', 'hash_salt', 'seed', 'from_time', 'to_time',
])
"""
Floating-car sampling.  Probes are the listed `probe_vehicle_ids`, or a
`penetration` share of all vehicles when no list is given.
"""

CrossingEvent = namedtuple('CrossingEvent', ['vehicle_id', 'detector_id', 'time', 'speed', 'vehicle_type', 'turn',
                                             'dwell'])
"""A trajectory crossing a loop; `dwell` is the time the vehicle occupies the loop."""

SegmentMeasurement = namedtuple('SegmentMeasurement', ['density', 'space_mean_speed'])

SegmentProbeConfig = namedtuple('SegmentProbeConfig', ['segment_id', 'road_id', 'interval', 'from_time', 'to_time'])


def validate_fcd_config(cfg):
    if not cfg.sample_period > 0:
        raise ConfigurationError('FCD sampling period must be positive')
    if cfg.probe_vehicle_ids is None and not 0 < cfg.penetration <= 1:
        raise ConfigurationError('FCD penetration must lie in (0, 1]')
    return cfg


def _first_time_at(trajectory, x):
    """First time the trajectory reaches position x, or None if it never does."""
    for (t0, x0), (t1, x1) in trajectory.pieces():
        if x1 > x0 and x0 <= x <= x1:
            return t0 + (x - x0) * (t1 - t0) / (x1 - x0)
    return None


def _dwell(trajectory, crossing_time, line, extent):
    """Time from reaching `line` until the rear of the vehicle clears `line + extent`."""
    length = trajectory.breakpoints[-1][1]
    far = line + extent
    if far <= length:
        return _first_time_at(trajectory, far) - crossing_time
    last_speed = trajectory.speeds()[-1]
    beyond = (far - length) / last_speed if last_speed > 0 else 0.0
    return trajectory.end_time + beyond - crossing_time


def detect_crossings(trajectories, cfg, length):
    """
    Crossings of the loop line by the trajectories on the loop's segment.

    The line lies `length - position` meters from the upstream end.  Each
    trajectory contributes at most one event, at the first moving piece
    reaching the line, so a vehicle standing on the line counts once, at its
    arrival.  The speed is the slope of that piece.
    """
    cfg.validate(length)
    line = length - cfg.position
    segment = cfg.segment
    events = []
    for trajectory in trajectories:
        if tuple(trajectory.segment) != segment:
            continue
        for (t0, x0), (t1, x1) in trajectory.pieces():
            if x1 > x0 and x0 <= line <= x1:
                time = t0 + (line - x0) * (t1 - t0) / (x1 - x0)
                if cfg.from_time <= time < cfg.to_time:
                    events.append(CrossingEvent(
                        trajectory.vehicle_id, cfg.loop_id, time, (x1 - x0) / (t1 - t0),
                        trajectory.vehicle_type, trajectory.turn,
                        _dwell(trajectory, time, line, cfg.loop_length + cfg.vehicle_length),
                    ))
                break
    events.sort(key=lambda event: (event.time, event.vehicle_id))
    return events


def apply_missing(events, missing_rate, seed):
    """Keep every event independently with probability 1 - missing_rate."""
    if not 0 <= missing_rate <= 1:
        raise ConfigurationError('missing rate must lie in [0, 1], got {0}'.format(missing_rate))
    draws = np.random.default_rng(seed).random(len(events))
    return [event for event, draw in zip(events, draws) if draw >= missing_rate]


def _interval_starts(from_time, to_time, interval):
    count = int(math.ceil((to_time - from_time) / interval))
    return [from_time + index * interval for index in range(count)]


def _harmonic_mean(speeds):
    if any(speed <= 0 for speed in speeds):
        return 0.0
    return len(speeds) / sum(1.0 / speed for speed in speeds)


def aggregate_loop(events, cfg, turn):
    """
    Loop rows of one detector and movement, one per interval of the measurement window.

    Intervals without crossings are kept, with zero counts and zero speeds.
    The last interval is a full one even when it reaches past the window.
    """
    selected = [event for event in events if event.turn == turn]
    by_interval = defaultdict(list)
    for event in selected:
        by_interval[int((event.time - cfg.from_time) // cfg.interval)].append(event)

    rows = []
    for index, start in enumerate(_interval_starts(cfg.from_time, cfg.to_time, cfg.interval)):
        members = by_interval.get(index, [])
        speeds = [event.speed * KMH_PER_MS for event in members]
        large = sum(1 for event in members if event.vehicle_type == ingest.LARGE_VEHICLE)
        rows.append(ingest.LoopRow(
            road_id=cfg.road_id,
            from_time=start,
            to_time=start + cfg.interval,
            interval=cfg.interval,
            count=len(members),
            regular_count=len(members) - large,
            large_count=large,
            arithmetic_speed=float(np.mean(speeds)) if speeds else 0.0,
            harmonic_speed=_harmonic_mean(speeds) if speeds else 0.0,
            turn=turn,
        ))
    return rows


def occupancy(events, cfg):
    """Share of each interval of the measurement window during which the loop is occupied."""
    starts = _interval_starts(cfg.from_time, cfg.to_time, cfg.interval)
    occupied = [0.0] * len(starts)
    for event in events:
        index = int((event.time - cfg.from_time) // cfg.interval)
        if 0 <= index < len(occupied):
            occupied[index] += event.dwell
    return [min(1.0, total / cfg.interval) for total in occupied]


def occupancy_rows(events, cfg):
    """Occupancy rows of one loop, in percent."""
    return [
        ingest.OccupancyRow(cfg.road_id, start, start + cfg.interval, cfg.interval, 100.0 * share)
        for start, share in zip(_interval_starts(cfg.from_time, cfg.to_time, cfg.interval), occupancy(events, cfg))
    ]


def loop_turns(net, cfg, events):
    """Movement labels reported by a loop: the segment's turn codes and any other label seen."""
    segment = net.segment(*cfg.segment)
    codes = set((segment.turns or {}).values()) or set([netmodel.DEFAULT_TURN])
    return sorted(codes | set(event.turn for event in events))


def measure_segment(trajectories, length, t, window):
    """
    Instant density at t and space-mean speed over [t, t + window] on one segment.

    The speed is the total distance travelled on the segment within the window
    divided by the total time spent there; it is None when nobody is present.
    """
    if not window > 0:
        raise InputError('measurement window must be positive')
    present = 0
    distance = 0.0
    spent = 0.0
    for trajectory in trajectories:
        if trajectory.start_time <= t < trajectory.end_time:
            present += 1
        begin = max(trajectory.start_time, t)
        end = min(trajectory.end_time, t + window)
        if end > begin:
            distance += trajectory.position_at(end) - trajectory.position_at(begin)
            spent += end - begin
    speed = distance / spent if spent > 0 else None
    return SegmentMeasurement(present / length, speed)


def segment_travel_times(trajectories, from_time, to_time, interval):
    """
    Mean traversal time of the trajectories entering a segment in each interval.

    Returns:
        (interval start, mean travel time or None, count) triples.
    """
    by_interval = defaultdict(list)
    for trajectory in trajectories:
        if from_time <= trajectory.start_time < to_time:
            index = int((trajectory.start_time - from_time) // interval)
            by_interval[index].append(trajectory.end_time - trajectory.start_time)
    result = []
    for index, start in enumerate(_interval_starts(from_time, to_time, interval)):
        times = by_interval.get(index, [])
        result.append((start, float(np.mean(times)) if times else None, len(times)))
    return result


def anonymize(vehicle_id, salt):
    """Irreversible, salted 16 hex digit ID; stable for a given salt."""
    digest = hashlib.blake2b(vehicle_id.encode('utf-8'), key=(salt or '').encode('utf-8'),
                             digest_size=HASH_DIGEST_SIZE)
    return digest.hexdigest()


def select_probes(vehicle_ids, cfg):
    """The probe vehicles among `vehicle_ids`."""
    if cfg.probe_vehicle_ids is not None:
        return set(vehicle_ids) & set(cfg.probe_vehicle_ids)
    ordered = sorted(set(vehicle_ids))
    draws = np.random.default_rng(cfg.seed).random(len(ordered))
    return set(vehicle_id for vehicle_id, draw in zip(ordered, draws) if draw < cfg.penetration)


def sample_fcd(trajectories, cfg, net):
    """
    Floating-car rows of the probe vehicles at every multiple of the sampling period.

    A vehicle is sampled only while it is on a reconstructed segment; a tick at
    the boundary of two consecutive segments belongs to the downstream one.
    """
    validate_fcd_config(cfg)
    probes = select_probes([trajectory.vehicle_id for trajectory in trajectories], cfg)
    starts = defaultdict(set)
    for trajectory in trajectories:
        starts[trajectory.vehicle_id].add(trajectory.start_time)

    lines = {}
    rows = []
    period = cfg.sample_period
    for trajectory in trajectories:
        if trajectory.vehicle_id not in probes:
            continue
        segment = tuple(trajectory.segment)
        if segment not in lines:
            geometry = net.segment(*segment).geometry or net.straight_geometry(*segment)
            lines[segment] = wkt.loads(geometry)
        line = lines[segment]
        length = trajectory.breakpoints[-1][1]
        begin = trajectory.start_time if cfg.from_time is None else max(trajectory.start_time, cfg.from_time)
        finish = trajectory.end_time if cfg.to_time is None else min(trajectory.end_time, cfg.to_time)
        tick = math.ceil(begin / period) * period
        vid = anonymize(trajectory.vehicle_id, cfg.hash_salt)
        while tick <= finish:
            if tick == trajectory.end_time and tick in starts[trajectory.vehicle_id]:
                break
            x = trajectory.position_at(tick)
            point = line.interpolate(x / length if length > 0 else 0.0, normalized=True)
            rows.append(ingest.FcdRow(
                vehicle_id=vid,
                vehicle_type=trajectory.vehicle_type,
                time=float(tick),
                lon=point.x,
                lat=point.y,
                speed=trajectory.speed_at(tick) * KMH_PER_MS,
                turn=trajectory.turn,
                distance=max(0.0, length - x),
                road_id=ingest.make_road_id(*segment),
            ))
            tick += period
    rows.sort(key=lambda row: (row.time, row.vehicle_id, row.road_id))
    log.info('Sampled %d FCD rows from %d probe vehicles', len(rows), len(probes))
    return rows


def _kept_crossings(trajectories, cfg, net):
    length = net.segment(*cfg.segment).length
    events = detect_crossings(trajectories, cfg, length)
    kept = apply_missing(events, cfg.missing_rate, cfg.detector_seed())
    log.info('Loop %s: %d crossings, %d kept', cfg.loop_id, len(events), len(kept))
    return events, kept


def measure_loop(trajectories, cfg, net):
    """
    Detect, thin and aggregate one loop.

    Returns:
        (loop rows, occupancy rows); occupancy counts only the detections kept.
    """
    events, kept = _kept_crossings(trajectories, cfg, net)
    rows = []
    for turn in loop_turns(net, cfg, events):
        rows.extend(aggregate_loop(kept, cfg, turn))
    rows.sort(key=lambda row: (row.from_time, row.turn))
    return rows, occupancy_rows(kept, cfg)


def run_loop_detector(trajectories, cfg, net):
    """Detect, thin and aggregate one loop; returns its loop rows."""
    return measure_loop(trajectories, cfg, net)[0]


def run_segment_probe(trajectories, cfg, net):
    """
    Segment probe rows, one per interval of the measurement window.

    Each row holds the density at the interval start, the space-mean speed
    over the interval and the mean travel time of the vehicles entering the
    segment during it.
    """
    segment = ingest.split_road_id(cfg.road_id)
    length = net.segment(*segment).length
    on_segment = [trajectory for trajectory in trajectories if tuple(trajectory.segment) == segment]
    rows = []
    for start, travel_time, count in segment_travel_times(on_segment, cfg.from_time, cfg.to_time, cfg.interval):
        measurement = measure_segment(on_segment, length, start, cfg.interval)
        speed = measurement.space_mean_speed
        rows.append(ingest.SegmentRow(
            road_id=cfg.road_id,
            from_time=start,
            to_time=start + cfg.interval,
            interval=cfg.interval,
            density=measurement.density * 1000.0,
            speed=None if speed is None else speed * KMH_PER_MS,
            travel_count=count,
            travel_time=travel_time,
        ))
    log.info('Segment probe %s: %d vehicles on %s', cfg.segment_id, len(on_segment), cfg.road_id)
    return rows


def segment_config_from_spec(spec, measurement):
    return SegmentProbeConfig(
        segment_id=spec.segment_id,
        road_id=spec.road_id,
        interval=spec.interval,
        from_time=measurement.from_time,
        to_time=measurement.to_time,
    )


def loop_config_from_spec(spec, measurement, seed):
    config = luigi.configuration.get_config()
    return LoopDetectorConfig(
        loop_id=spec.loop_id,
        road_id=spec.road_id,
        position=spec.position,
        interval=spec.interval,
        missing_rate=spec.missing_rate,
        from_time=measurement.from_time,
        to_time=measurement.to_time,
        loop_length=config.getfloat('measure', 'loop_length', DEFAULT_LOOP_LENGTH),
        vehicle_length=config.getfloat('measure', 'vehicle_length', DEFAULT_VEHICLE_LENGTH),
        seed=seed,
    )


class MeasurementMixin(netmodel.RoadNetworkMixin):
    """
    Parameters of a measurement run.

    Parameters:
        properties_file: the measurement properties file.
        trajectories: the trajectory store; defaults to `trajectories.csv` in the data directory.
        output_root: where measurement files are written; the properties' outputDir takes precedence.
        seed: seed of the missing-detection and penetration draws, overridden by the properties' seed.
    """
    properties_file = luigi.Parameter()
    trajectories = luigi.Parameter(default=None)
    output_root = luigi.Parameter(default=None)
    seed = luigi.IntParameter(default=0)

    def measurement(self):
        with get_target_from_url(self.properties_file).open('r') as properties_input:
            return properties.load_properties(properties_input)

    def trajectory_url(self):
        return self.trajectories or url_path_join(self.data_dir, 'trajectories.csv')

    def measure_root(self, measurement):
        root = measurement.output_dir or self.output_root
        if root is None:
            raise ConfigurationError('no output directory: set outputDir or --output-root')
        return root

    def measure_seed(self, measurement):
        return self.seed if measurement.seed is None else measurement.seed

    def measure_requirements(self):
        requirements = self.network_requirements()
        requirements['trajectories'] = ExternalURL(self.trajectory_url())
        return requirements

    def read_trajectories(self, inputs):
        with inputs['trajectories'].open('r') as trajectory_file:
            return reconstruct.trajectories_from_rows(ingest.read_table(ingest.TRAJECTORY, trajectory_file))


class LoopDetectionTask(MeasurementMixin, OverwriteOutputMixin, luigi.Task):
    """Writes `<loopId>.csv` and `<loopId>-occupancy.csv` for one loop group of the properties file."""

    loop_id = luigi.Parameter()

    def requires(self):
        return self.measure_requirements()

    def output(self):
        root = self.measure_root(self.measurement())
        return {
            'loop': get_target_from_url(url_path_join(root, '{0}.csv'.format(self.loop_id))),
            'occupancy': get_target_from_url(url_path_join(root, '{0}-occupancy.csv'.format(self.loop_id))),
        }

    def run(self):
        self.remove_output_on_overwrite()
        measurement = self.measurement()
        specs = [spec for spec in measurement.loops if spec.loop_id == self.loop_id]
        if not specs:
            raise ConfigurationError('no loop {0} in {1}'.format(self.loop_id, self.properties_file))
        inputs = self.input()
        net = self.read_network(inputs)
        cfg = loop_config_from_spec(specs[0], measurement, self.measure_seed(measurement))
        rows, occupancy = measure_loop(self.read_trajectories(inputs), cfg, net)
        outputs = self.output()
        with outputs['loop'].open('w') as output_file:
            ingest.write_table(ingest.LOOP, rows, output_file)
        with outputs['occupancy'].open('w') as output_file:
            ingest.write_table(ingest.OCCUPANCY, occupancy, output_file)


class SegmentProbeTask(MeasurementMixin, OverwriteOutputMixin, luigi.Task):
    """Writes `<segmentId>.csv` for one segment group of the properties file."""

    segment_id = luigi.Parameter()

    def requires(self):
        return self.measure_requirements()

    def output(self):
        root = self.measure_root(self.measurement())
        return get_target_from_url(url_path_join(root, '{0}.csv'.format(self.segment_id)))

    def run(self):
        self.remove_output_on_overwrite()
        measurement = self.measurement()
        specs = [spec for spec in measurement.segments if spec.segment_id == self.segment_id]
        if not specs:
            raise ConfigurationError('no segment probe {0} in {1}'.format(self.segment_id, self.properties_file))
        inputs = self.input()
        cfg = segment_config_from_spec(specs[0], measurement)
        rows = run_segment_probe(self.read_trajectories(inputs), cfg, self.read_network(inputs))
        with self.output().open('w') as output_file:
            ingest.write_table(ingest.SEGMENT, rows, output_file)


class FcdSamplingTask(MeasurementMixin, OverwriteOutputMixin, luigi.Task):
    """Writes `fcd.csv`, the floating-car samples of the measurement window."""

    penetration = luigi.FloatParameter(
        default=DEFAULT_PENETRATION,
        config_path={'section': 'measure', 'name': 'fcd_penetration'},
    )
    hash_salt = luigi.Parameter(
        default='',
        config_path={'section': 'measure', 'name': 'hash_salt'},
        significant=False,
    )
    probe_file = luigi.Parameter(default=None)

    def requires(self):
        return self.measure_requirements()

    def output(self):
        return get_target_from_url(url_path_join(self.measure_root(self.measurement()), 'fcd.csv'))

    def probe_ids(self):
        if self.probe_file is None:
            return None
        with get_target_from_url(self.probe_file).open('r') as probe_input:
            return set(line.strip() for line in probe_input if line.strip())

    def run(self):
        self.remove_output_on_overwrite()
        measurement = self.measurement()
        inputs = self.input()
        cfg = FcdConfig(
            sample_period=measurement.fcd_sampling_sec,
            probe_vehicle_ids=self.probe_ids(),
            penetration=measurement.fcd_penetration or self.penetration,
            hash_salt=measurement.hash_salt if measurement.hash_salt is not None else self.hash_salt,
            seed=self.measure_seed(measurement),
            from_time=measurement.from_time,
            to_time=measurement.to_time,
        )
        rows = sample_fcd(self.read_trajectories(inputs), cfg, self.read_network(inputs))
        with self.output().open('w') as output_file:
            ingest.write_table(ingest.FCD, rows, output_file)


class MeasureWorkflow(MeasurementMixin, OverwriteOutputMixin, luigi.Task):
    """
    Runs every loop and segment probe of a properties file, the FCD sampler
    when needFCD is set, and records the run in `manifest.yaml`.
    """

    def requires(self):
        measurement = self.measurement()
        shared = dict(
            data_dir=self.data_dir, max_hops=self.max_hops, properties_file=self.properties_file,
            trajectories=self.trajectories, output_root=self.output_root, seed=self.seed,
            overwrite=self.overwrite,
        )
        tasks = [LoopDetectionTask(loop_id=spec.loop_id, **shared) for spec in measurement.loops]
        tasks.extend(SegmentProbeTask(segment_id=spec.segment_id, **shared) for spec in measurement.segments)
        if measurement.need_fcd:
            tasks.append(FcdSamplingTask(**shared))
        return tasks

    def output(self):
        return get_target_from_url(url_path_join(self.measure_root(self.measurement()), 'manifest.yaml'))

    def run(self):
        self.remove_output_on_overwrite()
        measurement = self.measurement()
        with self.output().open('w') as output_file:
            yaml.safe_dump({
                'properties': self.properties_file,
                'properties_sha1': measurement.digest,
                'seed': self.measure_seed(measurement),
                'loops': [spec.loop_id + '.csv' for spec in measurement.loops],
                'occupancy': [spec.loop_id + '-occupancy.csv' for spec in measurement.loops],
                'segments': [spec.segment_id + '.csv' for spec in measurement.segments],
                'fcd': 'fcd.csv' if measurement.need_fcd else None,
            }, output_file, default_flow_style=False)
