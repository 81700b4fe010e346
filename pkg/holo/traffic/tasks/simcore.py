"""
Ground-truth simulation of a signalized corridor.

Vehicles enter a straight corridor of camera-equipped intersections and
follow the same kinematic model the reconstruction assumes: cruise at
free-flow speed, queue at red with jam spacing, leave as the discharge wave
reaches them and cross the stop line at capacity headway.  The output is
the set of true trajectories and node passings, plus the camera records,
signal plans and network files the rest of the pipeline consumes.
"""

import logging
import math
from collections import defaultdict, namedtuple

import luigi
import numpy as np
import yaml
from shapely.geometry import LineString

from holo.traffic.tasks import ingest, netmodel, reconstruct, tripbuild
from holo.traffic.tasks.exceptions import ScenarioError
from holo.traffic.tasks.netmodel import Node, RoadNetwork, Segment
from holo.traffic.tasks.reconstruct import StreamParams, Trajectory
from holo.traffic.tasks.url import ExternalURL, get_target_from_url, url_path_join
from holo.traffic.tasks.util.overwrite import OverwriteOutputMixin

log = logging.getLogger(__name__)

ENTRANCE = 'E'
EXIT = 'X'
# Length of the feeder, exit and side roads around the corridor.
STUB_LENGTH = 100.0
# Headway slack absorbing rounding of epoch-second arithmetic.
HEADWAY_SLACK = 1e-6
METERS_PER_DEGREE = 111320.0
SIDE_OFFSETS = {
    'L': (0.0, STUB_LENGTH),
    'R': (0.0, -STUB_LENGTH),
    'U': (-STUB_LENGTH / 2, STUB_LENGTH / 2),
}

SignalSpec = namedtuple('SignalSpec', ['cycle', 'green', 'offset', 'turns'])
"""Fixed-time plan of one intersection; `turns` maps a turn code to its own SignalSpec."""

CorridorSegment = namedtuple('CorridorSegment', ['length', 'lane_count'])

ScenarioConfig = namedtuple('ScenarioConfig', [
    'corridor', 'signals', 'rate', 'start', 'horizon', 'turn_fractions', 'large_share', 'params',
    'recognition_miss_rate', 'seed', 'origin', 'lpr_resolution',
])

Arrival = namedtuple('Arrival', ['vehicle_id', 'vehicle_type', 'time', 'route'])
"""A vehicle entering the corridor; `route[k]` is its turn at the k-th signalized node, the last one leaving."""

NodePassing = namedtuple('NodePassing', ['vehicle_id', 'node_id', 'road_id', 'time'])
"""A vehicle crossing the stop line of `node_id` coming from `road_id`."""

SimulationResult = namedtuple('SimulationResult', ['net', 'plans', 'trajectories', 'events', 'vehicles'])


def corridor_nodes(cfg):
    """IDs of the camera-equipped corridor intersections, upstream first."""
    return ['N{0}'.format(index) for index in range(len(cfg.corridor) + 1)]


def _used_turns(cfg):
    return sorted(turn for turn, share in cfg.turn_fractions.items() if share > 0)


def validate_scenario(cfg):
    """Raise ScenarioError unless the scenario can be simulated."""
    cfg.params.validate()
    if not cfg.corridor:
        raise ScenarioError('the corridor needs at least one segment')
    for segment in cfg.corridor:
        if not segment.length > 0 or segment.lane_count < 1:
            raise ScenarioError('invalid corridor segment {0}'.format(segment))
    if not cfg.horizon > 0:
        raise ScenarioError('horizon must be positive')
    if cfg.rate < 0 or cfg.rate >= cfg.params.q_m:
        raise ScenarioError('arrival rate {0} must lie in [0, q_m = {1})'.format(cfg.rate, cfg.params.q_m))
    if not 0 <= cfg.recognition_miss_rate <= 1:
        raise ScenarioError('recognition_miss_rate must lie in [0, 1]')
    if not 0 <= cfg.large_share <= 1:
        raise ScenarioError('large_share must lie in [0, 1]')
    if cfg.lpr_resolution is not None and not cfg.lpr_resolution > 0:
        raise ScenarioError('lpr_resolution must be positive')
    unknown = set(cfg.turn_fractions) - set(ingest.TURN_CODES)
    if unknown or any(share < 0 for share in cfg.turn_fractions.values()):
        raise ScenarioError('invalid turn fractions {0}'.format(cfg.turn_fractions))
    if not math.isclose(sum(cfg.turn_fractions.values()), 1.0, abs_tol=1e-9):
        raise ScenarioError('turn fractions must sum to 1')
    for node_id in corridor_nodes(cfg)[1:]:
        if node_id not in cfg.signals:
            raise ScenarioError('no signal for node {0}'.format(node_id))
    return cfg


def _signal_spec(raw, where):
    try:
        turns = dict((turn, _signal_spec(spec, where)) for turn, spec in (raw.get('turns') or {}).items())
        return SignalSpec(float(raw['cycle']), float(raw['green']), float(raw.get('offset', 0.0)), turns)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError('invalid signal for {0}: {1}'.format(where, exc))


def load_scenario(stream):
    """
    Parse a YAML scenario.

    Example::

        start: '2020-09-01 08:00:00'
        horizon: 1800
        seed: 7
        corridor:
          - {length: 400, lanes: 1}
          - {length: 350, lanes: 1}
        signals:
          default: {cycle: 90, green: 45, offset: 0}
          N2: {cycle: 90, green: 45, offset: 30}
        demand: {rate: 0.1, large_share: 0.1, turn_fractions: {S: 1.0}}
        params: {q_m: 0.36, k_m: 0.06, k_j: 0.19, v_f: 15.0}
        recognition_miss_rate: 0.0
        lpr_resolution: 1.0  # optional: camera clock tick in seconds, milliseconds otherwise
    """
    raw = yaml.safe_load(stream) or {}
    if not isinstance(raw, dict):
        raise ScenarioError('a scenario must be a mapping')
    try:
        corridor = [CorridorSegment(float(item['length']), int(item.get('lanes', 1))) for item in raw['corridor']]
        demand = raw.get('demand') or {}
        params = StreamParams()._replace(**(raw.get('params') or {}))
        start = raw.get('start', '2020-09-01 00:00:00')
        # YAML reads an unquoted timestamp as a datetime.
        start = float(start) if isinstance(start, (int, float)) else ingest.parse_timestamp(str(start))
        origin = raw.get('origin', [0.0, 0.0])
        signals_raw = raw.get('signals') or {}
        lpr_resolution = raw.get('lpr_resolution')
        lpr_resolution = None if lpr_resolution is None else float(lpr_resolution)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError('invalid scenario: {0}'.format(exc))

    node_ids = ['N{0}'.format(index) for index in range(1, len(corridor) + 1)]
    signals = {}
    for node_id in node_ids:
        spec = signals_raw.get(node_id, signals_raw.get('default'))
        if spec is not None:
            signals[node_id] = _signal_spec(spec, node_id)

    cfg = ScenarioConfig(
        corridor=corridor,
        signals=signals,
        rate=float(demand.get('rate', 0.1)),
        start=start,
        horizon=float(raw.get('horizon', 3600)),
        turn_fractions=dict((str(turn), float(share)) for turn, share in
                            (demand.get('turn_fractions') or {'S': 1.0}).items()),
        large_share=float(demand.get('large_share', 0.0)),
        params=params,
        recognition_miss_rate=float(raw.get('recognition_miss_rate', 0.0)),
        seed=int(raw.get('seed', 0)),
        origin=(float(origin[0]), float(origin[1])),
        lpr_resolution=lpr_resolution,
    )
    return validate_scenario(cfg)


def _coordinates(cfg, x, y):
    lon0, lat0 = cfg.origin
    lon = lon0 + x / (METERS_PER_DEGREE * math.cos(math.radians(lat0)))
    lat = lat0 + y / METERS_PER_DEGREE
    return lon, lat


def corridor_network(cfg):
    """
    The road network of a scenario.

    A feeder road from E, which has no camera, enters N0; N0 to Nn are the
    signalized corridor intersections with cameras.  Straight ahead of Nn
    lies the exit X, and a side road per turn code takes turning vehicles
    away at every intersection.
    """
    nodes = corridor_nodes(cfg)
    turns = [turn for turn in _used_turns(cfg) if turn != netmodel.DEFAULT_TURN]
    positions = {ENTRANCE: (0.0, 0.0)}
    x = STUB_LENGTH
    for index, node_id in enumerate(nodes):
        positions[node_id] = (x, 0.0)
        if index < len(cfg.corridor):
            x += cfg.corridor[index].length
    positions[EXIT] = (x + STUB_LENGTH, 0.0)

    side = {}
    for node_id in nodes[1:]:
        for turn in turns:
            dx, dy = SIDE_OFFSETS[turn]
            side[(node_id, turn)] = node_id + turn
            positions[node_id + turn] = (positions[node_id][0] + dx, dy)

    node_list = []
    for node_id, (px, py) in sorted(positions.items()):
        lon, lat = _coordinates(cfg, px, py)
        node_list.append(Node(node_id, node_id in nodes, lon, lat))

    def movements(junction, straight):
        found = {straight: netmodel.DEFAULT_TURN}
        for turn in turns:
            found[side[(junction, turn)]] = turn
        return found

    keys = [(ENTRANCE, nodes[0], {nodes[1]: netmodel.DEFAULT_TURN}, STUB_LENGTH, 1)]
    for index, segment in enumerate(cfg.corridor):
        downstream = nodes[index + 1]
        straight = nodes[index + 2] if index + 2 < len(nodes) else EXIT
        keys.append((nodes[index], downstream, movements(downstream, straight), segment.length, segment.lane_count))
    keys.append((nodes[-1], EXIT, None, STUB_LENGTH, 1))
    for (junction, _turn), side_id in sorted(side.items()):
        keys.append((junction, side_id, None, STUB_LENGTH, 1))

    segments = []
    for upstream, downstream, turn_map, length, lanes in keys:
        line = LineString([_coordinates(cfg, *positions[upstream]), _coordinates(cfg, *positions[downstream])])
        segments.append(Segment(upstream, downstream, length, lanes, turn_map, line.wkt))
    return RoadNetwork(node_list, segments)


def scenario_plans(cfg):
    """
    Signal plans of every movement leaving the corridor segments.

    Plans run from one cycle before the start to well after the horizon so
    that queues formed late can still discharge.
    """
    nodes = corridor_nodes(cfg)
    phases = []
    for index in range(1, len(nodes)):
        spec = cfg.signals[nodes[index]]
        for turn in set(_used_turns(cfg)) | set([netmodel.DEFAULT_TURN]):
            turn_spec = spec.turns.get(turn, spec)
            end = cfg.start + cfg.horizon + max(600.0, 10 * turn_spec.cycle)
            phases.extend(tripbuild.fixed_time_phases(
                nodes[index], nodes[index - 1], turn, turn_spec.cycle, turn_spec.green,
                cfg.start + turn_spec.offset, cfg.start - turn_spec.cycle, end,
            ))
    return tripbuild.SignalPlan(phases)


def generate_demand(cfg):
    """
    Vehicles entering the corridor over the horizon.

    Entries are not a Poisson stream: headways are the minimum headway 1/q_m
    plus an exponential remainder, so no two vehicles enter closer than the
    saturation headway while the mean rate stays the configured one.  Each
    vehicle draws its type and, at every signalized node, a turn; any turn but
    straight leaves the corridor.
    """
    if cfg.rate <= 0:
        return []
    rng = np.random.default_rng(cfg.seed)
    minimum = cfg.params.headway
    mean = 1.0 / cfg.rate
    codes = sorted(cfg.turn_fractions)
    shares = [cfg.turn_fractions[code] for code in codes]
    arrivals = []
    t = cfg.start
    while True:
        t += minimum + rng.exponential(mean - minimum)
        if t >= cfg.start + cfg.horizon:
            break
        vehicle_type = ingest.LARGE_VEHICLE if rng.random() < cfg.large_share else ingest.REGULAR_VEHICLE
        route = []
        for _ in cfg.corridor:
            route.append(str(rng.choice(codes, p=shares)))
            if route[-1] != netmodel.DEFAULT_TURN:
                break
        arrivals.append(Arrival('sim{0:05d}'.format(len(arrivals) + 1), vehicle_type, t, route))
    log.info('Generated %d arrivals over %.0f s', len(arrivals), cfg.horizon)
    return arrivals


def discharge_stream(entries, greens, length, lane_count, params):
    """
    Move the vehicles of one stream through its stop line, first in first out.

    A vehicle arriving at the stop line during green, at least one headway
    after its predecessor, passes unhindered.  Any other vehicle joins the
    queue of the first green it can leave in: it stops at its slot, leaves
    as the discharge wave arrives and keeps one headway to its predecessor.

    Args:
        entries: (vehicle, entry time) pairs in entry order.
        greens: the stream's green phases, sorted.

    Returns:
        (vehicle, exit time, breakpoints, queued, stop offset) per entry.

    Raises:
        ScenarioError: a queue spills back beyond the segment or the plan ends too early.
    """
    v_f = params.v_f
    v_m = params.capacity_speed
    wave = abs(reconstruct.wave_speed(params))
    headway = params.headway
    queue_counts = defaultdict(int)
    previous = None
    results = []
    for vehicle, entry in entries:
        arrival = entry + length / v_f
        containing = [index for index, green in enumerate(greens) if green.g_start <= arrival <= green.g_end]
        if containing and (previous is None or arrival >= previous + headway - HEADWAY_SLACK):
            results.append((vehicle, arrival, reconstruct.chord(entry, arrival, length), False, None))
            previous = arrival
            continue

        earliest = arrival if previous is None else max(arrival, previous + headway)
        for index, green in enumerate(greens):
            if green.g_end < earliest:
                continue
            slot = queue_counts[index] + 1
            offset = reconstruct.stop_position(slot, params, lane_count)
            if offset > length:
                raise ScenarioError('queue spills back beyond a {0:.0f} m segment; demand too high'.format(length))
            reach = entry + (length - offset) / v_f
            released = green.g_start + offset / wave
            exit_time = max(max(reach, released) + offset / v_m, green.g_start)
            if previous is not None:
                exit_time = max(exit_time, previous + headway)
            if exit_time <= green.g_end:
                break
        else:
            raise ScenarioError('signal plan ends before vehicle {0} can leave'.format(vehicle.vehicle_id))

        queue_counts[index] += 1
        breakpoints = reconstruct.queued_breakpoints(entry, exit_time, offset, length, v_f, v_m)
        if breakpoints is None:
            breakpoints = reconstruct.chord(entry, exit_time, length)
            offset = None
        results.append((vehicle, exit_time, breakpoints, True, offset))
        previous = exit_time
    return results


def simulate_ground_truth(cfg, demand, plans=None, net=None):
    """
    Run every arrival through the corridor.

    Segments are processed upstream first; the vehicles going straight at
    a node enter the next segment at the moment they cross its stop line.

    Returns:
        SimulationResult with the true trajectories (sorted by vehicle then
        time) and node passings (sorted by time).
    """
    validate_scenario(cfg)
    net = net or corridor_network(cfg)
    plans = plans or scenario_plans(cfg)
    nodes = corridor_nodes(cfg)
    events = [NodePassing(arrival.vehicle_id, nodes[0], ingest.make_road_id(ENTRANCE, nodes[0]), arrival.time)
              for arrival in demand]
    trajectories = []
    entering = [(arrival, arrival.time) for arrival in demand]
    for index, segment in enumerate(cfg.corridor):
        upstream, downstream = nodes[index], nodes[index + 1]
        streams = defaultdict(list)
        for arrival, entry in sorted(entering, key=lambda item: (item[1], item[0].vehicle_id)):
            streams[arrival.route[index]].append((arrival, entry))
        entering = []
        for turn in sorted(streams):
            greens = plans.phases(downstream, upstream, turn)
            for arrival, exit_time, breakpoints, queued, offset in discharge_stream(
                    streams[turn], greens, segment.length, segment.lane_count, cfg.params):
                trajectories.append(Trajectory(
                    arrival.vehicle_id, arrival.vehicle_type, (upstream, downstream), turn,
                    breakpoints, queued, offset,
                ))
                events.append(NodePassing(
                    arrival.vehicle_id, downstream, ingest.make_road_id(upstream, downstream), exit_time
                ))
                if turn == netmodel.DEFAULT_TURN and index + 1 < len(cfg.corridor):
                    entering.append((arrival, exit_time))

    trajectories.sort(key=lambda trajectory: (trajectory.vehicle_id, trajectory.start_time))
    events.sort(key=lambda event: (event.time, event.vehicle_id, event.node_id))
    vehicles = [ingest.VehicleRow(arrival.vehicle_id, arrival.vehicle_type) for arrival in demand]
    log.info('Simulated %d vehicles, %d trajectories, %d queued', len(demand), len(trajectories),
             sum(1 for trajectory in trajectories if trajectory.queued))
    return SimulationResult(net, plans, trajectories, events, vehicles)


def emit_lpr(events, avi_nodes, recognition_miss_rate, seed, resolution=None):
    """
    Camera records of the node passings.

    Passings at nodes without a camera are dropped; every other passing is
    missed independently with the given probability, one seeded draw per
    passing in time order.  Consecutive surviving passings of a vehicle are
    paired into LprRows.

    Args:
        resolution: camera clock tick in seconds, e.g. 1.0 for whole-second
            stamps; recorded times are truncated to it.  None keeps the
            passing times, which the tables store to the millisecond.
    """
    avi_nodes = set(avi_nodes)
    ordered = sorted(
        (event for event in events if event.node_id in avi_nodes),
        key=lambda event: (event.time, event.vehicle_id, event.node_id),
    )
    draws = np.random.default_rng(seed).random(len(ordered))
    survivors = defaultdict(list)
    for event, draw in zip(ordered, draws):
        if draw >= recognition_miss_rate:
            survivors[event.vehicle_id].append(event)
    rows = []
    for vehicle_id in sorted(survivors):
        passings = survivors[vehicle_id]
        for first, second in zip(passings, passings[1:]):
            rows.append(ingest.LprRow(
                vehicle_id, first.road_id, second.road_id,
                _camera_time(first.time, resolution), _camera_time(second.time, resolution),
            ))
    rows.sort(key=lambda row: (row.from_time, row.vehicle_id))
    return rows


def _camera_time(time, resolution):
    if resolution is None:
        return time
    return math.floor(time / resolution) * resolution


class SimulateScenarioTask(OverwriteOutputMixin, luigi.Task):
    """
    Writes a data directory from a YAML scenario.

    Besides the network, camera records, signal plans and vehicle table the
    pipeline reads, the true trajectories are kept under `truth/` for
    comparison.

    Parameters:
        params_file: optional YAML file overriding the stream parameters of the scenario.
        seed: overrides the seed of the scenario.
    """

    scenario_file = luigi.Parameter()
    output_root = luigi.Parameter()
    seed = luigi.IntParameter(default=None)
    params_file = luigi.Parameter(default=None)

    def requires(self):
        return ExternalURL(self.scenario_file)

    def output(self):
        return dict(
            (name, get_target_from_url(url_path_join(self.output_root, filename)))
            for name, filename in (
                ('network', 'network.csv'), ('nodes', 'nodes.csv'), ('lpr', 'lpr.csv'),
                ('signal_plans', 'signal_plans.csv'), ('vehicles', 'vehicles.csv'),
                ('truth', 'truth/trajectories.csv'),
            )
        )

    def run(self):
        self.remove_output_on_overwrite()
        with self.input().open('r') as scenario_input:
            cfg = load_scenario(scenario_input)
        if self.seed is not None:
            cfg = cfg._replace(seed=self.seed)
        if self.params_file is not None:
            with get_target_from_url(self.params_file).open('r') as params_input:
                params = StreamParams.from_yaml(params_input, base=cfg.params)
            cfg = validate_scenario(cfg._replace(params=params))
            log.info('Stream parameters overridden from %s', self.params_file)
        result = simulate_ground_truth(cfg, generate_demand(cfg))
        lpr = emit_lpr(result.events, [node.node_id for node in result.net.nodes() if node.avi],
                       cfg.recognition_miss_rate, cfg.seed, cfg.lpr_resolution)

        outputs = self.output()
        road_rows, node_rows = result.net.to_rows()
        tables = (
            ('network', ingest.ROAD_NETWORK, road_rows),
            ('nodes', ingest.NODE, node_rows),
            ('lpr', ingest.LPR, lpr),
            ('signal_plans', ingest.SIGNAL_PLAN, result.plans.to_rows()),
            ('vehicles', ingest.VEHICLE, result.vehicles),
            ('truth', ingest.TRAJECTORY, reconstruct.trajectories_to_rows(result.trajectories)),
        )
        for name, schema, rows in tables:
            with outputs[name].open('w') as output_file:
                ingest.write_table(schema, rows, output_file)
