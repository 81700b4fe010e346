"""
Reconstruct vehicle trajectories on signalized segments.

Vehicles of one turning stream on one segment are processed together,
signal cycle by signal cycle from the last one backwards.  Each vehicle is
either classified as queued, in which case it approaches at free-flow
speed, stands at its queue slot until the discharge wave reaches it and
leaves at capacity speed, or as moving freely.  Trajectories are
piecewise-linear lists of (time, position) breakpoints, positions measured
in meters from the upstream end of the segment.
"""

import bisect
import itertools
import logging
import math
import zlib
from collections import defaultdict, namedtuple

import luigi
import luigi.configuration
import numpy as np
import yaml

from holo.traffic.tasks import ingest, netmodel, tripbuild
from holo.traffic.tasks.exceptions import ConfigurationError, DataError, InputError, SpillbackError
from holo.traffic.tasks.url import UncheckedExternalURL, get_target_from_url, url_path_join
from holo.traffic.tasks.util.overwrite import OverwriteOutputMixin

log = logging.getLogger(__name__)

STREAM_PARAMS_SECTION = 'stream-params'

# Slack for comparisons between times derived from the same observations.
EPSILON = 1e-9

# Relative shortfall below v_f that still counts as an unhindered pass; covers the rounding of epoch times.
FREE_FLOW_TOLERANCE = 1e-6


class StreamParams(namedtuple('StreamParams', [
        'q_m', 'k_m', 'k_j', 'v_f', 'alpha', 'beta', 'v_queue_threshold', 'lane_aware'])):
    """
    Traffic flow parameters of a stream.

    q_m is the capacity (veh/s), k_m the density at capacity and k_j the jam
    density (veh/m), v_f the free-flow speed (m/s); alpha and beta are the
    speed-density exponents.  v_queue_threshold is the referring speed below
    which a vehicle is taken as queued.  None means just below v_f: a vehicle
    is queued as soon as it was measurably slower than free flow, which is
    exact for streams that follow this model.  Field data with scattered
    cruising speeds needs an explicit, lower threshold.
    """

    __slots__ = ()

    DEFAULTS = {
        'q_m': 0.36,
        'k_m': 0.06,
        'k_j': 0.19,
        'v_f': 15.0,
        'alpha': 1.0,
        'beta': 0.05,
        'v_queue_threshold': None,
        'lane_aware': False,
    }

    def __new__(cls, q_m=0.36, k_m=0.06, k_j=0.19, v_f=15.0, alpha=1.0, beta=0.05, v_queue_threshold=None,
                lane_aware=False):
        return super(StreamParams, cls).__new__(cls, q_m, k_m, k_j, v_f, alpha, beta, v_queue_threshold, lane_aware)

    def validate(self):
        """Raise ConfigurationError unless 0 < k_m < k_j, all rates are positive and q_m/k_m <= v_f."""
        for name in ('q_m', 'k_m', 'k_j', 'v_f', 'alpha', 'beta'):
            if not getattr(self, name) > 0:
                raise ConfigurationError('{0} must be positive, got {1}'.format(name, getattr(self, name)))
        if not self.k_m < self.k_j:
            raise ConfigurationError('k_m ({0}) must be below k_j ({1})'.format(self.k_m, self.k_j))
        if self.capacity_speed > self.v_f + EPSILON:
            raise ConfigurationError('capacity speed q_m/k_m exceeds v_f')
        if self.v_queue_threshold is not None and not self.v_queue_threshold > 0:
            raise ConfigurationError('v_queue_threshold must be positive')
        return self

    @property
    def threshold(self):
        if self.v_queue_threshold is not None:
            return self.v_queue_threshold
        return self.v_f * (1.0 - FREE_FLOW_TOLERANCE)

    @property
    def capacity_speed(self):
        return self.q_m / self.k_m

    @property
    def headway(self):
        """Discharge headway at the stop line."""
        return 1.0 / self.q_m

    @classmethod
    def from_config(cls):
        """Read the [stream-params] section of the luigi configuration."""
        config = luigi.configuration.get_config()
        values = {}
        for name, default in cls.DEFAULTS.items():
            if name == 'lane_aware':
                values[name] = config.getboolean(STREAM_PARAMS_SECTION, name, default)
            elif name == 'v_queue_threshold':
                raw = config.get(STREAM_PARAMS_SECTION, name, '')
                values[name] = float(raw) if raw not in ('', None) else None
            else:
                values[name] = config.getfloat(STREAM_PARAMS_SECTION, name, default)
        return cls(**values).validate()

    @classmethod
    def from_yaml(cls, stream, base=None):
        """Override `base` (the configured parameters by default) with the keys of a YAML mapping."""
        base = base if base is not None else cls.from_config()
        overrides = yaml.safe_load(stream) or {}
        if not isinstance(overrides, dict):
            raise ConfigurationError('stream parameters must be a mapping')
        unknown = sorted(set(overrides) - set(cls._fields))
        if unknown:
            raise ConfigurationError('unknown stream parameter {0}'.format(unknown[0]))
        return base._replace(**overrides).validate()


StreamVehicle = namedtuple('StreamVehicle', [
    'vehicle_id', 'vehicle_type', 'turn', 'entry_time', 'entry_window', 'exit_time', 'exit_window'
])
"""
One vehicle of a stream.

`entry_time` is exact when `entry_window` is None, else a point estimate
inside that green phase.  `exit_time` is None when the exit was not observed;
`exit_window` then optionally bounds it.
"""

StreamObservation = namedtuple('StreamObservation', ['segment', 'turn', 'length', 'lane_count', 'vehicles'])

CycleIteration = namedtuple('CycleIteration', ['cycle', 'green', 'passing', 'carried_in', 'completed', 'carried_out'])


class Trajectory(namedtuple('Trajectory', [
        'vehicle_id', 'vehicle_type', 'segment', 'turn', 'breakpoints', 'queued', 'stop_position'])):
    """
    Piecewise-linear trajectory of one vehicle on one segment.

    `breakpoints` is a tuple of (t, x) with strictly increasing t.
    """

    __slots__ = ()

    @property
    def start_time(self):
        return self.breakpoints[0][0]

    @property
    def end_time(self):
        return self.breakpoints[-1][0]

    def pieces(self):
        """Consecutive breakpoint pairs."""
        return list(zip(self.breakpoints, self.breakpoints[1:]))

    def speeds(self):
        return [(x1 - x0) / (t1 - t0) for (t0, x0), (t1, x1) in self.pieces()]

    def position_at(self, t):
        """Position at time t, or None when the vehicle is not on the segment."""
        if t < self.start_time or t > self.end_time:
            return None
        times = [point[0] for point in self.breakpoints]
        index = bisect.bisect_right(times, t) - 1
        if index >= len(self.breakpoints) - 1:
            return self.breakpoints[-1][1]
        (t0, x0), (t1, x1) = self.breakpoints[index], self.breakpoints[index + 1]
        return x0 + (x1 - x0) * (t - t0) / (t1 - t0)

    def speed_at(self, t):
        """Speed of the piece active at t (the later piece at a breakpoint), or None off the segment."""
        if t < self.start_time or t > self.end_time:
            return None
        times = [point[0] for point in self.breakpoints]
        index = min(bisect.bisect_right(times, t) - 1, len(self.breakpoints) - 2)
        return self.speeds()[index]


def wave_speed(p):
    """Speed of the stop and discharge waves, negative (upstream)."""
    if not p.k_j > p.k_m:
        raise ConfigurationError('jam density {0} must exceed the density at capacity {1}'.format(p.k_j, p.k_m))
    return -p.q_m / (p.k_j - p.k_m)


def speed_from_density(k, p):
    """Speed-density relation v = v_f * (1 - (k / k_j) ** beta) ** alpha."""
    if k < 0 or k > p.k_j:
        raise InputError('density {0} outside [0, {1}]'.format(k, p.k_j))
    return p.v_f * (1.0 - (k / p.k_j) ** p.beta) ** p.alpha


def stop_position(order_index, p, lane_count=1):
    """
    Distance upstream of the stop line where the order_index-th queued vehicle stops.

    Lane-aware parameters share the queue among the segment's lanes.
    """
    if order_index < 1:
        raise InputError('queue order starts at 1, got {0}'.format(order_index))
    position = (order_index - 1) / p.k_j
    if p.lane_aware:
        position /= lane_count
    return position


def queued_breakpoints(entry, exit_time, stop_offset, length, v_f, v_m):
    """
    Breakpoints of a vehicle stopping `stop_offset` meters upstream of the stop line.

    The vehicle enters at `entry`, cruises at v_f to its slot, stands, and
    covers the last `stop_offset` meters at the capacity speed v_m so that it
    passes the stop line at `exit_time`.

    Returns:
        A tuple of (t, x) breakpoints, or None when the vehicle cannot reach
        its slot before it has to leave it.
    """
    stand = length - stop_offset
    arrival = entry + stand / v_f
    departure = exit_time - stop_offset / v_m
    if arrival > departure + EPSILON or stand < 0:
        return None
    points = [(entry, 0.0), (arrival, stand), (departure, stand), (exit_time, length)]
    deduplicated = [points[0]]
    for point in points[1:]:
        if point[0] > deduplicated[-1][0] + EPSILON:
            deduplicated.append(point)
        elif point[1] == deduplicated[-1][1]:
            continue
        else:
            deduplicated[-1] = (deduplicated[-1][0], point[1])
    return tuple(deduplicated)


def chord(entry, exit_time, length):
    return ((entry, 0.0), (exit_time, length))


def discriminate_queuing(referring_speed, p):
    """Queued iff a referring speed is available and below the threshold."""
    return referring_speed is not None and referring_speed < p.threshold


def enforce_one_wave(flags):
    """
    At most one stop wave per cycle: every vehicle up to the last queued one is queued.
    """
    flags = list(flags)
    queued = [index for index, flag in enumerate(flags) if flag]
    if not queued:
        return flags
    last = queued[-1]
    return [index <= last for index in range(len(flags))]


def _stream_seed(seed, segment, turn, cycle):
    label = '{0}|{1}'.format(ingest.make_road_id(*segment), turn).encode('utf-8')
    return np.random.default_rng([int(seed), zlib.crc32(label), int(cycle)])


class StreamReconstruction(object):
    """
    Backward cycle-by-cycle reconstruction of one stream.

    After construction, `trajectories` holds one Trajectory per vehicle and
    `iterations` the bookkeeping of each cycle, from the last to the first.
    """

    def __init__(self, obs, plans, params, seed=0):
        self.obs = obs
        self.params = params
        self.seed = seed
        self.length = obs.length
        upstream, downstream = obs.segment
        self.greens = None
        if plans is not None and plans.has_plan(downstream, upstream, obs.turn):
            self.greens = plans.phases(downstream, upstream, obs.turn)
        else:
            log.debug('No signal plan for %s turn %s, every vehicle moves freely',
                      ingest.make_road_id(*obs.segment), obs.turn)
        self.iterations = []
        self.exits = {}
        self.trajectories = self._run()

    def _check_inputs(self):
        last_exit = None
        for vehicle in self.obs.vehicles:
            if vehicle.exit_time is None:
                continue
            if vehicle.exit_time - vehicle.entry_time <= 0:
                raise DataError('vehicle {0} covers {1:.1f} m of {2} in no time'.format(
                    vehicle.vehicle_id, self.length, ingest.make_road_id(*self.obs.segment)))
            if last_exit is not None and vehicle.exit_time < last_exit - EPSILON:
                raise DataError('vehicle {0} overtakes within stream {1} turn {2}'.format(
                    vehicle.vehicle_id, ingest.make_road_id(*self.obs.segment), self.obs.turn))
            last_exit = vehicle.exit_time

    def cycle_of(self, t):
        """Index of the cycle (from one green start to the next) containing t."""
        if self.greens is None:
            return 0
        index = bisect.bisect_right([green.g_start for green in self.greens], t) - 1
        if index < 0:
            raise ConfigurationError('signal plan of {0} turn {1} starts after {2}'.format(
                ingest.make_road_id(*self.obs.segment), self.obs.turn, ingest.format_timestamp(t)))
        return index

    def _green(self, cycle):
        if self.greens is None:
            return tripbuild.GreenPhase(self.obs.segment[1], self.obs.segment[0], self.obs.turn, -math.inf, math.inf)
        return self.greens[cycle]

    def _first_green_ending_after(self, t):
        if self.greens is None:
            return 0
        ends = [green.g_end for green in self.greens]
        index = bisect.bisect_left(ends, t)
        if index == len(self.greens):
            raise ConfigurationError('signal plan of {0} turn {1} ends before {2}'.format(
                ingest.make_road_id(*self.obs.segment), self.obs.turn, ingest.format_timestamp(t)))
        return index

    def _complete_unknown_exits(self):
        """Draw the exits the cameras did not see, latest vehicle first."""
        vehicles = self.obs.vehicles
        v_f = self.params.v_f
        known = [vehicle.exit_time for vehicle in vehicles]
        upper_cycle = {}
        completion = {}
        rngs = {}
        following_exit = None
        for index in reversed(range(len(vehicles))):
            vehicle = vehicles[index]
            if vehicle.exit_time is not None:
                self.exits[index] = vehicle.exit_time
                following_exit = vehicle.exit_time
                continue
            lower = vehicle.entry_time + self.length / v_f
            previous_known = [t for t in known[:index] if t is not None]
            if previous_known:
                lower = max(lower, previous_known[-1])
            upper = following_exit
            if vehicle.exit_window is not None:
                lower = max(lower, vehicle.exit_window[0])
                upper = vehicle.exit_window[1] if upper is None else min(upper, vehicle.exit_window[1])

            cycle = self._first_green_ending_after(lower)
            green = self._green(cycle)
            low = max(lower, green.g_start)
            high = green.g_end if upper is None else min(upper, green.g_end)
            if high > low:
                if cycle not in rngs:
                    rngs[cycle] = _stream_seed(self.seed, self.obs.segment, self.obs.turn, cycle)
                exit_time = low + (high - low) * rngs[cycle].random()
            else:
                exit_time = low if upper is None else min(low, upper)
            self.exits[index] = exit_time
            following_exit = exit_time
            completion[index] = cycle
            upper_cycle[index] = self.cycle_of(upper) if upper is not None and not math.isinf(upper) else cycle
            upper_cycle[index] = max(upper_cycle[index], cycle)
        return completion, upper_cycle

    def _run(self):
        self._check_inputs()
        vehicles = self.obs.vehicles
        if not vehicles:
            return []
        completion, upper_cycle = self._complete_unknown_exits()

        members = defaultdict(list)
        for index in range(len(vehicles)):
            cycle = completion.get(index)
            if cycle is None:
                cycle = self.cycle_of(self.exits[index])
            members[cycle].append(index)

        last_cycle = max(list(members) + list(upper_cycle.values()))
        first_cycle = min(members)
        trajectories = [None] * len(vehicles)
        carried = set()
        for cycle in range(last_cycle, first_cycle - 1, -1):
            passing = [index for index in members.get(cycle, []) if index not in completion]
            carried_in = carried | set(index for index, upper in upper_cycle.items() if upper == cycle)
            completed = set(index for index in carried_in if completion[index] == cycle)
            carried = carried_in - completed
            self.iterations.append(CycleIteration(
                cycle, self._green(cycle),
                [vehicles[index].vehicle_id for index in passing],
                sorted(vehicles[index].vehicle_id for index in carried_in),
                sorted(vehicles[index].vehicle_id for index in completed),
                sorted(vehicles[index].vehicle_id for index in carried),
            ))
            if members.get(cycle):
                for index, trajectory in self._reconstruct_cycle(cycle, sorted(members[cycle]), completion):
                    trajectories[index] = trajectory
        return trajectories

    def _referring_speed(self, vehicle, index, order, green, completion):
        """
        Speed between the entry and the point telling whether the vehicle stopped.

        With an observed exit the point is the exit itself.  An entry known
        only as a green phase is referred to the end of that green, or to
        the latest entry from which the exit is reachable at v_f when the
        green ends later.  A vehicle without observed exit is referred to the
        moment the discharge wave reaches its slot; one entering at or after
        that moment meets no standing queue and gets v_f.

        Returns:
            The speed in m/s, or None when the slot lies beyond the segment.
        """
        v_f = self.params.v_f
        if index in completion:
            slot = stop_position(order, self.params, self.obs.lane_count)
            if slot > self.length:
                return None
            reached = green.g_start + slot / abs(wave_speed(self.params))
            reference = vehicle.entry_time if vehicle.entry_window is None else vehicle.entry_window[1]
            if reached <= reference + EPSILON:
                return v_f
            return (self.length - slot) / (reached - reference)
        exit_time = self.exits[index]
        if vehicle.entry_window is None:
            reference = vehicle.entry_time
        else:
            reference = min(vehicle.entry_window[1], exit_time - self.length / v_f)
        # Positive: _check_inputs rejects exits at or before the entry estimate.
        return self.length / (exit_time - reference)

    def _local_speed(self, t):
        """Speed-density speed at the stream's density around time t."""
        present = sum(
            1 for index, vehicle in enumerate(self.obs.vehicles)
            if vehicle.entry_time <= t < self.exits[index]
        )
        density = min(present / self.length, self.params.k_j)
        return speed_from_density(density, self.params)

    def _reconstruct_cycle(self, cycle, indexes, completion):
        vehicles = self.obs.vehicles
        green = self._green(cycle)
        flags = []
        for order, index in enumerate(indexes, start=1):
            speed = self._referring_speed(vehicles[index], index, order, green, completion)
            flags.append(self.greens is not None and discriminate_queuing(speed, self.params))
        flags = enforce_one_wave(flags)

        slot_order = 0
        for index, queued in zip(indexes, flags):
            vehicle = vehicles[index]
            exit_time = self.exits[index]
            breakpoints = None
            stop_offset = None
            if queued:
                slot_order += 1
                stop_offset = stop_position(slot_order, self.params, self.obs.lane_count)
                if stop_offset > self.length:
                    raise SpillbackError('queue of {0} turn {1} spills back beyond the segment in the cycle '
                                         'starting {2}'.format(ingest.make_road_id(*self.obs.segment), self.obs.turn,
                                                               ingest.format_timestamp(green.g_start)))
                breakpoints = queued_breakpoints(
                    vehicle.entry_time, exit_time, stop_offset, self.length,
                    self.params.v_f, self.params.capacity_speed,
                )
                if breakpoints is None:
                    stop_offset = None
                    breakpoints = chord(vehicle.entry_time, exit_time, self.length)
            else:
                breakpoints = self._free_breakpoints(vehicle, index, completion)
            yield index, Trajectory(
                vehicle.vehicle_id, vehicle.vehicle_type, self.obs.segment, vehicle.turn,
                breakpoints, queued, stop_offset,
            )

    def _free_breakpoints(self, vehicle, index, completion):
        exit_time = self.exits[index]
        exact_entry = vehicle.entry_window is None
        exact_exit = index not in completion
        if exact_entry and exact_exit:
            return chord(vehicle.entry_time, exit_time, self.length)
        if exact_entry:
            speed = self._local_speed(vehicle.entry_time)
            if speed > 0:
                # Keep the completed exit between its neighbours.
                end = vehicle.entry_time + self.length / speed
                if index > 0:
                    end = max(end, self.exits[index - 1])
                if index + 1 < len(self.obs.vehicles):
                    end = min(end, self.exits[index + 1])
                if end > vehicle.entry_time:
                    self.exits[index] = end
                    return chord(vehicle.entry_time, end, self.length)
            return chord(vehicle.entry_time, exit_time, self.length)
        speed = self._local_speed(exit_time)
        if speed > 0:
            return chord(exit_time - self.length / speed, exit_time, self.length)
        return chord(vehicle.entry_time, exit_time, self.length)


def reconstruct_stream(obs, plans, params, seed=0):
    """
    Trajectories of every vehicle of one stream, in stream order.

    Raises:
        DataError: exits violate first-in-first-out or a vehicle covers the segment in no time.
        SpillbackError: a queue would extend beyond the upstream end of the segment.
        ConfigurationError: the signal plan does not cover the observations.
    """
    return StreamReconstruction(obs, plans, params, seed).trajectories


def build_stream_observations(trips, net, vehicle_types=None):
    """
    Group the segment traversals of all trips into per-(segment, turn) streams.

    The turn at the last node of a trip is unknown; such vehicles join the
    straight-ahead stream.  Vehicles are ordered by entry time.
    """
    vehicle_types = vehicle_types or {}
    streams = defaultdict(list)
    for trip in trips:
        passings = trip.passings
        for k in range(len(passings) - 1):
            up, down = passings[k], passings[k + 1]
            if k + 2 < len(passings):
                turn = net.turn_code(up.node_id, down.node_id, passings[k + 2].node_id)
            else:
                turn = ingest.UNKNOWN_TURN
            stream_turn = netmodel.DEFAULT_TURN if turn == ingest.UNKNOWN_TURN else turn
            observed_exit = down.source == ingest.OBSERVED
            streams[(up.node_id, down.node_id, stream_turn)].append(StreamVehicle(
                vehicle_id=trip.vehicle_id,
                vehicle_type=vehicle_types.get(trip.vehicle_id, ingest.REGULAR_VEHICLE),
                turn=turn,
                entry_time=up.time,
                entry_window=None if up.source == ingest.OBSERVED else (up.g_start, up.g_end),
                exit_time=down.time if observed_exit else None,
                exit_window=None if observed_exit else (down.g_start, down.g_end),
            ))

    observations = []
    for upstream, downstream, turn in sorted(streams):
        segment = net.segment(upstream, downstream)
        vehicles = sorted(
            streams[(upstream, downstream, turn)], key=lambda vehicle: (vehicle.entry_time, vehicle.vehicle_id)
        )
        observations.append(StreamObservation(
            (upstream, downstream), turn, segment.length, segment.lane_count, vehicles
        ))
    return observations


def reconstruct_all(observations, plans, params, seed=0):
    """Reconstruct every stream; trajectories sorted by vehicle then time."""
    params.validate()
    trajectories = []
    for obs in observations:
        trajectories.extend(reconstruct_stream(obs, plans, params, seed))
    trajectories.sort(key=lambda trajectory: (trajectory.vehicle_id, trajectory.start_time))
    log.info('Reconstructed %d trajectories over %d streams', len(trajectories), len(observations))
    return trajectories


def trajectories_to_rows(trajectories):
    """Serialize trajectories, one TrajectoryRow per breakpoint."""
    return [
        ingest.TrajectoryRow(
            trajectory.vehicle_id, trajectory.vehicle_type, ingest.make_road_id(*trajectory.segment),
            trajectory.turn, seq, t, x, trajectory.queued,
        )
        for trajectory in trajectories for seq, (t, x) in enumerate(trajectory.breakpoints)
    ]


def trajectories_from_rows(rows):
    """
    Inverse of `trajectories_to_rows`.

    Stop positions are not stored; for queued vehicles they are recovered
    from the standing piece of the trajectory.
    """
    trajectories = []
    ordered = sorted(rows, key=lambda row: (row.vehicle_id, row.road_id, row.seq))
    grouping = itertools.groupby(ordered, key=lambda row: (row.vehicle_id, row.road_id))
    for (vehicle_id, road_id), group in grouping:
        group = list(group)
        segment = ingest.split_road_id(road_id)
        breakpoints = tuple((row.time, row.position) for row in group)
        stop_offset = None
        if group[0].queued:
            length = breakpoints[-1][1]
            standing = [x0 for (_t0, x0), (_t1, x1) in zip(breakpoints, breakpoints[1:]) if x0 == x1]
            if standing:
                stop_offset = length - standing[0]
        trajectories.append(Trajectory(
            vehicle_id, group[0].vehicle_type, segment, group[0].turn, breakpoints, group[0].queued, stop_offset
        ))
    trajectories.sort(key=lambda trajectory: (trajectory.vehicle_id, trajectory.start_time))
    return trajectories


def read_vehicle_types(vehicle_file):
    return dict((row.vehicle_id, row.vehicle_type) for row in ingest.read_table(ingest.VEHICLE, vehicle_file))


class StreamParamsMixin(object):
    """
    Parameters selecting the traffic flow parameters.

    Parameters:
        params_file: optional YAML file overriding the [stream-params] configuration.
        seed: seed of every random draw.
    """
    params_file = luigi.Parameter(default=None)
    seed = luigi.IntParameter(default=0)

    def stream_params(self):
        if self.params_file is None:
            return StreamParams.from_config()
        with get_target_from_url(self.params_file).open('r') as params_input:
            return StreamParams.from_yaml(params_input)


class ReconstructTrajectoriesTask(StreamParamsMixin, tripbuild.TripBuildMixin, OverwriteOutputMixin, luigi.Task):
    """Writes `trajectories.csv`, the trajectory store, from the trips of `BuildTripsTask`."""

    output_root = luigi.Parameter()

    def requires(self):
        requirements = self.trip_requirements()
        requirements['trips'] = tripbuild.BuildTripsTask(
            data_dir=self.data_dir, output_root=self.output_root, v_min=self.v_min, max_hops=self.max_hops,
        )
        requirements['vehicles'] = UncheckedExternalURL(url_path_join(self.data_dir, 'vehicles.csv'))
        return requirements

    def output(self):
        return get_target_from_url(url_path_join(self.output_root, 'trajectories.csv'))

    def run(self):
        self.remove_output_on_overwrite()
        inputs = self.input()
        net = self.read_network(inputs)
        plans = self.read_signal_plans(inputs)
        with inputs['trips']['trips'].open('r') as trip_file:
            trips = tripbuild.trips_from_rows(ingest.read_table(ingest.TRIP, trip_file), net)
        vehicle_types = {}
        if inputs['vehicles'].exists():
            with inputs['vehicles'].open('r') as vehicle_file:
                vehicle_types = read_vehicle_types(vehicle_file)
        observations = build_stream_observations(trips, net, vehicle_types)
        trajectories = reconstruct_all(observations, plans, self.stream_params(), self.seed)
        with self.output().open('w') as output_file:
            ingest.write_table(ingest.TRAJECTORY, trajectories_to_rows(trajectories), output_file)
