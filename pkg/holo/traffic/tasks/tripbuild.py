"""
Build trips from license plate records.

A vehicle's plate observations are split into trips wherever two
consecutive observations cannot belong to one uninterrupted journey, the
node path between observations is resolved on the road network, and the
passing times at intersections without a camera are inferred from the
signal plans: a vehicle can only cross a stop line during a green phase.
"""

import bisect
import itertools
import logging
import math
from collections import defaultdict, namedtuple

import luigi

from holo.traffic.tasks import ingest, netmodel
from holo.traffic.tasks.exceptions import ConfigurationError, InputError, ModelInconsistencyError, ResolutionError
from holo.traffic.tasks.url import ExternalURL, get_target_from_url, url_path_join
from holo.traffic.tasks.util.overwrite import OverwriteOutputMixin

log = logging.getLogger(__name__)

# 5 km/h
DEFAULT_V_MIN = 5.0 / 3.6

# Rendered timestamps carry milliseconds, inferred times are resolved to the same grid.
RESOLUTION = 0.001

DISCONNECTED = 'disconnected'
MULTIPLE_CHAINS = 'multiple_chains'
MISSED_DETECTION = 'missed_detection'
MULTIPLE_PATHS = 'multiple_paths'


LprRecord = namedtuple('LprRecord', ['vehicle_id', 'node_id', 'time', 'x'])
"""One passing of a vehicle at a camera.  `x` is the trip chainage, assigned once the path is known."""

GreenPhase = namedtuple('GreenPhase', ['node_id', 'approach', 'turn', 'g_start', 'g_end'])

PassingTime = namedtuple('PassingTime', ['node_id', 'source', 'time', 'g_start', 'g_end', 'x'])
"""
Passing of one node of a trip.

Observed passings have exact times and no phase.  Inferred passings carry the
span of their candidate green phases, which is a single phase unless the
trip is flagged `multiple_chains`, and a point estimate inside the earliest
candidate chain.
"""

TripStub = namedtuple('TripStub', ['vehicle_id', 'records', 'legs', 'flags'])
"""Observations of one trip; `legs[k]` is the node path from records[k] to records[k + 1]."""

ScheduledPassing = namedtuple('ScheduledPassing', ['node_id', 'time', 'phase'])


class Trip(namedtuple('Trip', ['vehicle_id', 'trip', 'passings', 'flags'])):
    """A vehicle's trip: its passings in path order plus diagnostic flags."""

    __slots__ = ()

    @property
    def node_path(self):
        return [passing.node_id for passing in self.passings]

    @property
    def start_time(self):
        return self.passings[0].time

    @property
    def end_time(self):
        return self.passings[-1].time

    @property
    def inferred_count(self):
        """Number of passings not seen by a camera, for false-match filtering downstream."""
        return sum(1 for passing in self.passings if passing.source == ingest.INFERRED)


class PassingGraph(namedtuple('PassingGraph', ['nodes', 'layers', 'edges', 'proved'])):
    """
    Layered graph of candidate green phases along a path.

    `layers[k]` holds the candidate phases at `nodes[k]`, sorted by start;
    `edges[k]` is the set of (phase in layer k, phase in layer k + 1) pairs
    a vehicle can chain.  The first and last layers hold the observed
    passings as zero-length phases.  A graph without layers is empty: the
    observations cannot be chained.
    """

    __slots__ = ()

    @property
    def is_empty(self):
        return not self.layers

    def successors(self, k, phase):
        return sorted((b for a, b in self.edges[k] if a == phase), key=_phase_order)

    def chains(self):
        """Every complete chain of phases, in earliest-first order."""
        if self.is_empty:
            return

        def extend(chain):
            k = len(chain) - 1
            if k == len(self.edges):
                yield tuple(chain)
                return
            for phase in self.successors(k, chain[-1]):
                for found in extend(chain + [phase]):
                    yield found

        for first in self.layers[0]:
            for chain in extend([first]):
                yield chain

    def chain_count(self):
        """Number of complete chains, counted without enumerating them."""
        if self.is_empty:
            return 0
        counts = dict((phase, 1) for phase in self.layers[-1])
        for k in reversed(range(len(self.edges))):
            below = defaultdict(int)
            for a, b in self.edges[k]:
                below[a] += counts.get(b, 0)
            counts = below
        return sum(counts.get(phase, 0) for phase in self.layers[0])


def _phase_order(phase):
    return (phase.g_start, phase.g_end)


def _empty_graph(path):
    return PassingGraph(list(path), [], [], True)


class SignalPlan(object):
    """
    Green phase instances indexed by (node, approach, turn).

    A movement with no or an unknown turn code uses the straight-ahead plan.
    """

    def __init__(self, phases=()):
        self._phases = defaultdict(list)
        for phase in phases:
            if not phase.g_start < phase.g_end:
                raise ConfigurationError('empty green phase {0}'.format(phase))
            self._phases[self._key(phase.node_id, phase.approach, phase.turn)].append(phase)
        self._ends = {}
        for key, items in self._phases.items():
            items.sort(key=_phase_order)
            for previous, current in zip(items, items[1:]):
                if current.g_start < previous.g_end:
                    raise ConfigurationError('overlapping green phases for {0}'.format(key))
            self._ends[key] = [phase.g_end for phase in items]

    @staticmethod
    def _key(node_id, approach, turn):
        if turn in (None, ingest.UNKNOWN_TURN):
            turn = netmodel.DEFAULT_TURN
        return (node_id, approach, turn)

    @classmethod
    def from_rows(cls, rows):
        return cls(GreenPhase(row.node_id, row.approach, row.turn, row.green_start, row.green_end) for row in rows)

    def to_rows(self):
        return [
            ingest.SignalPlanRow(phase.node_id, phase.approach, phase.turn, phase.g_start, phase.g_end)
            for key in sorted(self._phases) for phase in self._phases[key]
        ]

    def keys(self):
        return sorted(self._phases)

    def has_plan(self, node_id, approach, turn):
        return self._key(node_id, approach, turn) in self._phases

    def phases(self, node_id, approach, turn):
        """All phases of a movement, sorted.  Raises ConfigurationError if the movement has no plan."""
        key = self._key(node_id, approach, turn)
        if key not in self._phases:
            raise ConfigurationError('no signal plan for node {0}, approach {1}, turn {2}'.format(*key))
        return self._phases[key]

    def phases_from(self, node_id, approach, turn, time):
        """Phases of a movement that end at or after `time`."""
        key = self._key(node_id, approach, turn)
        phases = self.phases(node_id, approach, turn)
        return phases[bisect.bisect_left(self._ends[key], time):]

    def overlapping(self, node_id, approach, turn, start, end):
        """Phases of a movement intersecting [start, end]."""
        return list(itertools.takewhile(
            lambda phase: phase.g_start <= end, self.phases_from(node_id, approach, turn, start)
        ))

    def phase_containing(self, node_id, approach, turn, time):
        """The phase of a movement with g_start <= time <= g_end, or None."""
        for phase in self.overlapping(node_id, approach, turn, time, time):
            return phase
        return None

    def __len__(self):
        return sum(len(items) for items in self._phases.values())


def fixed_time_phases(node_id, approach, turn, cycle, green, offset, start, end):
    """
    Expand a fixed-time signal into the green phases intersecting [start, end).

    Greens begin at `offset + n * cycle` (epoch seconds) and last `green` seconds.
    """
    if not cycle > 0 or not 0 < green <= cycle:
        raise ConfigurationError('invalid fixed-time plan: cycle {0}, green {1}'.format(cycle, green))
    index = int(math.floor((start - offset - green) / cycle))
    phases = []
    while offset + index * cycle < end:
        g_start = offset + index * cycle
        if g_start + green > start:
            phases.append(GreenPhase(node_id, approach, turn, g_start, g_start + green))
        index += 1
    return phases


def accessibility(segment_length, t_i, t_j, v_min):
    """
    1 if the elapsed time between two passings is shorter than crossing the segment at minimal speed, else 0.

    Raises:
        InputError: non-positive length or speed, or t_j earlier than t_i.
    """
    if not segment_length > 0:
        raise InputError('segment length must be positive, got {0}'.format(segment_length))
    if not v_min > 0:
        raise InputError('v_min must be positive, got {0}'.format(v_min))
    if t_j < t_i:
        raise InputError('passing at {0} precedes the previous passing at {1}'.format(t_j, t_i))
    return 1 if segment_length / v_min > t_j - t_i else 0


def phase_accessibility(phase_k, phase_k1, segment_length, v_min):
    """Accessibility between the end of one green and the start of the next one downstream."""
    if phase_k1.g_start < phase_k.g_end:
        # Overlapping greens: zero elapsed time is always accessible.
        return accessibility(segment_length, 0.0, 0.0, v_min)
    return accessibility(segment_length, phase_k.g_end, phase_k1.g_start, v_min)


def transition_feasible(phase_k, phase_k1, segment_length, v_min):
    """A vehicle passing in `phase_k` can next pass in `phase_k1`."""
    return phase_k1.g_end > phase_k.g_start and phase_accessibility(phase_k, phase_k1, segment_length, v_min) == 1


def build_passing_graph(net, path, t_i, t_j, plans, v_min):
    """
    Forward sweep: layer by layer, keep the candidate phases reachable from the first observation.

    The result is not trimmed (`proved` is False); phases may not lead to the last observation.
    """
    if t_j < t_i:
        raise InputError('observation at {0} precedes the previous one at {1}'.format(t_j, t_i))
    start = GreenPhase(path[0], None, None, t_i, t_i)
    end = GreenPhase(path[-1], None, None, t_j, t_j)
    layers = [[start]]
    edges = []
    for k in range(1, len(path)):
        length = net.segment(path[k - 1], path[k]).length
        if k == len(path) - 1:
            candidates = [end]
        else:
            turn = net.turn_code(path[k - 1], path[k], path[k + 1])
            if not plans.has_plan(path[k], path[k - 1], turn):
                raise ConfigurationError('no signal plan for node {0}, approach {1}, turn {2}'.format(
                    path[k], path[k - 1], turn
                ))
            candidates = plans.overlapping(path[k], path[k - 1], turn, t_i, t_j)
        layer = []
        layer_edges = set()
        for candidate in candidates:
            sources = [phase for phase in layers[-1] if transition_feasible(phase, candidate, length, v_min)]
            if sources:
                layer.append(candidate)
                layer_edges.update((phase, candidate) for phase in sources)
        layers.append(layer)
        edges.append(layer_edges)
    return PassingGraph(list(path), layers, edges, False)


def trim_passing_graph(graph):
    """Backward pass: keep only the phases and edges lying on a complete chain."""
    if graph.is_empty or not all(graph.layers):
        return _empty_graph(graph.nodes)
    alive = set(graph.layers[-1])
    kept_layers = [sorted(alive, key=_phase_order)]
    kept_edges = []
    for k in reversed(range(len(graph.edges))):
        layer_edges = set(edge for edge in graph.edges[k] if edge[1] in alive)
        alive = set(edge[0] for edge in layer_edges)
        kept_edges.insert(0, layer_edges)
        kept_layers.insert(0, sorted(alive, key=_phase_order))
    if not alive:
        return _empty_graph(graph.nodes)
    return PassingGraph(graph.nodes, kept_layers, kept_edges, True)


def infer_passing_times(net, path, t_i, t_j, plans, v_min):
    """
    Candidate green phases at the unobserved nodes of `path` between passings at t_i and t_j.

    For a single segment the graph holds just the two observations, linked
    when they are accessible.  Otherwise candidate phases are swept forward
    from the first observation and trimmed back from the last one.

    Returns:
        The trimmed PassingGraph, empty when the observations cannot be chained.

    Raises:
        ConfigurationError: an unobserved node has no signal plan for the movement.
    """
    if len(path) < 2:
        raise InputError('a path needs at least two nodes, got {0!r}'.format(path))
    if len(path) == 2:
        length = net.segment(path[0], path[1]).length
        if not accessibility(length, t_i, t_j, v_min):
            return _empty_graph(path)
        start = GreenPhase(path[0], None, None, t_i, t_i)
        end = GreenPhase(path[1], None, None, t_j, t_j)
        return PassingGraph(list(path), [[start], [end]], [set([(start, end)])], True)
    return trim_passing_graph(build_passing_graph(net, path, t_i, t_j, plans, v_min))


def resolve_passing_schedule(graph, t_i, t_j, chainage=None):
    """
    Point passing times along the earliest chain of a trimmed passing graph.

    Each unobserved node gets the time obtained by interpolating between
    t_i and t_j in proportion to its chainage, clipped into its phase and
    nudged to keep the times strictly increasing.

    Args:
        chainage: distance of each path node from the first one; evenly spaced if omitted.

    Raises:
        ResolutionError: the graph is empty.
    """
    if graph.is_empty:
        raise ResolutionError('cannot resolve passing times from an empty passing graph')
    if chainage is None:
        chainage = list(range(len(graph.nodes)))

    chain = [graph.layers[0][0]]
    for k in range(len(graph.edges)):
        chain.append(graph.successors(k, chain[-1])[0])

    latest = [t_j] * len(chain)
    for k in reversed(range(1, len(chain) - 1)):
        latest[k] = min(chain[k].g_end, latest[k + 1] - RESOLUTION)

    total = float(chainage[-1] - chainage[0]) or 1.0
    schedule = [ScheduledPassing(graph.nodes[0], t_i, None)]
    for k in range(1, len(chain) - 1):
        estimate = round(t_i + (t_j - t_i) * (chainage[k] - chainage[0]) / total, 3)
        earliest = max(chain[k].g_start, schedule[-1].time + RESOLUTION)
        schedule.append(ScheduledPassing(graph.nodes[k], max(earliest, min(estimate, latest[k])), chain[k]))
    schedule.append(ScheduledPassing(graph.nodes[-1], t_j, None))
    return schedule


def candidate_interval(graph, k):
    """
    Span of the candidate green phases at `graph.nodes[k]`.

    This is the phase itself when a single chain survives trimming; with
    several chains it runs from the earliest candidate start to the latest
    candidate end, so it holds the true passing whichever chain is right.
    """
    if graph.is_empty:
        raise ResolutionError('an empty passing graph has no candidate phases')
    layer = graph.layers[k]
    return min(phase.g_start for phase in layer), max(phase.g_end for phase in layer)


def lpr_rows_to_records(rows):
    """
    Unpack LPR pairs into camera passings, sorted by vehicle and time.

    Each row yields a passing at the downstream node of FROAD and of TROAD;
    a passing shared by two consecutive rows is kept once.
    """
    events = set()
    for row in rows:
        for road_id, time in ((row.from_road, row.from_time), (row.to_road, row.to_time)):
            events.add((row.vehicle_id, ingest.split_road_id(road_id)[1], time))
    return [
        LprRecord(vehicle_id, node_id, time, None)
        for vehicle_id, node_id, time in sorted(events, key=lambda event: (event[0], event[2], event[1]))
    ]


def split_into_trips(records, net, v_min, max_hops=netmodel.DEFAULT_MAX_HOPS, fsrn=None):
    """
    Split one vehicle's time-sorted passings into trip stubs.

    Consecutive passings stay in one trip when a path joins them and it is
    accessible at minimal speed.  Paths are looked up on the full-sensing
    network `fsrn` first, where they are unique; only passings it cannot
    join are joined on `net`, through the closed traffic zones.  Where
    several camera-free paths exist the network is not full-sensing there:
    the shortest one (the first of equal length) is taken and the trip
    flagged `multiple_paths`.  When no path without cameras exists, a path
    through cameras that missed the vehicle is accepted if it is the only
    one; otherwise the trip is split and both halves are flagged
    disconnected.
    """
    if not records:
        return []
    stubs = []
    current = [records[0]]
    legs = []
    flags = set()

    def close(extra_flags=()):
        stubs.append(TripStub(records[0].vehicle_id, list(current), list(legs), frozenset(flags | set(extra_flags))))

    for record in records[1:]:
        previous = current[-1]
        path = None
        missed = False
        ambiguous = False
        if record.node_id != previous.node_id:
            paths = []
            if fsrn is not None:
                paths = netmodel.enumerate_paths(fsrn, previous.node_id, record.node_id, max_hops)
            if not paths:
                paths = netmodel.enumerate_paths(net, previous.node_id, record.node_id, max_hops)
            if len(paths) > 1:
                log.warning('Vehicle %s: %d paths from %s to %s, the network is not full-sensing there',
                            record.vehicle_id, len(paths), previous.node_id, record.node_id)
                paths = [min(paths, key=net.path_length)]
                ambiguous = True
            if not paths:
                paths = netmodel.enumerate_paths(net, previous.node_id, record.node_id, max_hops, through_avi=True)
                missed = True
            if len(paths) != 1:
                log.warning('Vehicle %s: no unique path from %s to %s, trip chain disconnected',
                            record.vehicle_id, previous.node_id, record.node_id)
                close([DISCONNECTED])
                current, legs, flags = [record], [], set([DISCONNECTED])
                continue
            path = paths[0]

        if path is not None and accessibility(net.path_length(path), previous.time, record.time, v_min):
            current.append(record)
            legs.append(path)
            if missed:
                flags.add(MISSED_DETECTION)
            if ambiguous:
                flags.add(MULTIPLE_PATHS)
        else:
            close()
            current, legs, flags = [record], [], set()
    close()
    return stubs


def _resolve_stub(stub, net, plans, v_min):
    """Infer the unobserved passings of a stub, splitting it where the chain is disconnected."""
    trips = []
    first = stub.records[0]
    passings = [PassingTime(first.node_id, ingest.OBSERVED, first.time, None, None, 0.0)]
    flags = set(stub.flags)
    for k, leg in enumerate(stub.legs):
        a, b = stub.records[k], stub.records[k + 1]
        origin = passings[-1].x
        chainage = [origin]
        for upstream, downstream in zip(leg, leg[1:]):
            chainage.append(chainage[-1] + net.segment(upstream, downstream).length)
        if len(leg) > 2:
            graph = infer_passing_times(net, leg, a.time, b.time, plans, v_min)
            if graph.is_empty:
                log.warning('Vehicle %s: no green phase chain from %s to %s, trip chain disconnected',
                            stub.vehicle_id, a.node_id, b.node_id)
                trips.append(Trip(stub.vehicle_id, None, passings, frozenset(flags | set([DISCONNECTED]))))
                passings = [PassingTime(b.node_id, ingest.OBSERVED, b.time, None, None, 0.0)]
                flags = set(stub.flags) | set([DISCONNECTED])
                continue
            chains = graph.chain_count()
            if chains > 1:
                log.debug('Vehicle %s: %d green phase chains from %s to %s', stub.vehicle_id, chains,
                          a.node_id, b.node_id)
                flags.add(MULTIPLE_CHAINS)
            schedule = resolve_passing_schedule(graph, a.time, b.time, chainage)
            for index, scheduled in enumerate(schedule[1:-1], start=1):
                g_start, g_end = candidate_interval(graph, index)
                passings.append(PassingTime(
                    scheduled.node_id, ingest.INFERRED, scheduled.time, g_start, g_end, chainage[index]
                ))
        passings.append(PassingTime(b.node_id, ingest.OBSERVED, b.time, None, None, chainage[-1]))
    trips.append(Trip(stub.vehicle_id, None, passings, frozenset(flags)))
    return trips


def build_trips(records, net, plans, v_min=DEFAULT_V_MIN, max_hops=netmodel.DEFAULT_MAX_HOPS, fsrn=None):
    """
    Split, resolve and infer the trips of every vehicle.

    Args:
        fsrn: the full-sensing network extracted from `net`, searched first for paths.

    Returns:
        Trips sorted by vehicle ID then start time, numbered per vehicle from 0.
    """
    trips = []
    ordered = sorted(records, key=lambda record: (record.vehicle_id, record.time, record.node_id))
    for vehicle_id, vehicle_records in itertools.groupby(ordered, key=lambda record: record.vehicle_id):
        resolved = []
        for stub in split_into_trips(list(vehicle_records), net, v_min, max_hops, fsrn):
            resolved.extend(_resolve_stub(stub, net, plans, v_min))
        for index, trip in enumerate(resolved):
            trips.append(trip._replace(trip=index))
    log.info('Built %d trips from %d passings', len(trips), len(ordered))
    return trips


def trip_parts_to_rows(trips, fsrn, zones):
    """
    Decompose every trip path into parts on the FSRN and parts inside closed zones.

    Raises:
        ModelInconsistencyError: a trip uses a segment neither on the FSRN nor inside a zone.
    """
    rows = []
    for trip in trips:
        try:
            decomposition = netmodel.decompose_trip(fsrn, zones, trip.node_path)
        except ModelInconsistencyError as exc:
            raise ModelInconsistencyError('trip {0} of vehicle {1}: {2}'.format(trip.trip, trip.vehicle_id, exc))
        for index, part in enumerate(decomposition.parts):
            rows.append(ingest.TripPartRow(trip.vehicle_id, trip.trip, index, part.kind, part.zone_id,
                                           tuple(part.nodes)))
    crossing = len(set((row.vehicle_id, row.trip) for row in rows if row.kind == ingest.INNER_ZONE))
    log.info('%d of %d trips cross a closed traffic zone', crossing, len(trips))
    return rows


def trips_to_rows(trips):
    """Serialize trips, one TripRow per passing."""
    return [
        ingest.TripRow(
            trip.vehicle_id, trip.trip, seq, passing.node_id, passing.source, passing.time,
            passing.g_start, passing.g_end, tuple(sorted(trip.flags)),
        )
        for trip in trips for seq, passing in enumerate(trip.passings)
    ]


def trips_from_rows(rows, net):
    """Inverse of `trips_to_rows`; chainage is recomputed from the network."""
    trips = []
    ordered = sorted(rows, key=lambda row: (row.vehicle_id, row.trip, row.seq))
    for (vehicle_id, trip_index), trip_rows in itertools.groupby(ordered, key=lambda row: (row.vehicle_id, row.trip)):
        trip_rows = list(trip_rows)
        passings = []
        x = 0.0
        for row in trip_rows:
            if passings:
                x += net.segment(passings[-1].node_id, row.node_id).length
            passings.append(PassingTime(row.node_id, row.source, row.time, row.green_start, row.green_end, x))
        trips.append(Trip(vehicle_id, trip_index, passings, frozenset(trip_rows[0].flags)))
    return trips


class TripBuildMixin(netmodel.RoadNetworkMixin):
    """
    Parameters for trip building.

    Parameters:
        v_min: minimal plausible travel speed in m/s.
    """
    v_min = luigi.FloatParameter(
        default=DEFAULT_V_MIN,
        config_path={'section': 'trip-build', 'name': 'v_min'},
    )

    def trip_requirements(self):
        requirements = self.network_requirements()
        requirements['lpr'] = ExternalURL(url_path_join(self.data_dir, 'lpr.csv'))
        requirements['signal_plans'] = ExternalURL(url_path_join(self.data_dir, 'signal_plans.csv'))
        return requirements

    def read_signal_plans(self, inputs):
        with inputs['signal_plans'].open('r') as plan_file:
            return SignalPlan.from_rows(ingest.read_table(ingest.SIGNAL_PLAN, plan_file))


class BuildTripsTask(TripBuildMixin, OverwriteOutputMixin, luigi.Task):
    """
    Writes `trips.csv`, every vehicle's trips with observed and inferred passings,
    and `trip-parts.csv`, each trip split into FSRN parts and closed-zone parts.
    """

    output_root = luigi.Parameter()

    def requires(self):
        requirements = self.trip_requirements()
        requirements['fsrn'] = netmodel.ExtractFsrnTask(
            data_dir=self.data_dir,
            output_root=self.output_root,
            max_hops=self.max_hops,
        )
        return requirements

    def output(self):
        return {
            'trips': get_target_from_url(url_path_join(self.output_root, 'trips.csv')),
            'parts': get_target_from_url(url_path_join(self.output_root, 'trip-parts.csv')),
        }

    def run(self):
        self.remove_output_on_overwrite()
        inputs = self.input()
        net = self.read_network(inputs)
        fsrn = self.read_network(inputs['fsrn'])
        with inputs['fsrn']['zones'].open('r') as zone_file:
            zones = netmodel.zones_from_yaml(zone_file)
        plans = self.read_signal_plans(inputs)
        with inputs['lpr'].open('r') as lpr_file:
            records = lpr_rows_to_records(ingest.read_table(ingest.LPR, lpr_file))
        trips = build_trips(records, net, plans, self.v_min, self.max_hops, fsrn)
        parts = trip_parts_to_rows(trips, fsrn, zones)
        outputs = self.output()
        with outputs['trips'].open('w') as output_file:
            ingest.write_table(ingest.TRIP, trips_to_rows(trips), output_file)
        with outputs['parts'].open('w') as output_file:
            ingest.write_table(ingest.TRIP_PART, parts, output_file)
