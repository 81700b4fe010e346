"""
Directed road network model.

A road network is a directed graph of intersections (nodes, some of them
equipped with AVI cameras) and road segments keyed by their (upstream,
downstream) node pair.  This module answers the questions the trip builder
depends on: which paths can connect two consecutive plate observations, is
that path always unique (the network is *full-sensing*), and if not, which
segments have to be set aside into closed traffic zones so that the rest of
the network is.
"""

import logging
from collections import Counter, defaultdict, namedtuple

import luigi
import networkx as nx
import yaml
from shapely.geometry import LineString

from holo.traffic.tasks import ingest
from holo.traffic.tasks.exceptions import ExtractionError, InputError, ModelInconsistencyError
from holo.traffic.tasks.url import ExternalURL, get_target_from_url, url_path_join
from holo.traffic.tasks.util.overwrite import OverwriteOutputMixin

log = logging.getLogger(__name__)

DEFAULT_MAX_HOPS = 12
DEFAULT_TURN = 'S'

ON_FSRN = ingest.ON_FSRN
INNER_ZONE = ingest.INNER_ZONE


Node = namedtuple('Node', ['node_id', 'avi', 'lon', 'lat'])
"""An intersection.  `lon`/`lat` are None when no coordinates are known."""

Segment = namedtuple('Segment', ['upstream', 'downstream', 'length', 'lane_count', 'turns', 'geometry'])
"""
A directed road segment.

`turns` maps each permitted next node to its turn code, or is None when the
segment places no restriction on the movements at its downstream junction.
"""

TrafficZone = namedtuple('TrafficZone', ['zone_id', 'boundary_segments', 'interior_segments', 'interior_nodes'])

FullSensingReport = namedtuple('FullSensingReport', ['is_fsrn', 'violations'])

PathPart = namedtuple('PathPart', ['kind', 'nodes', 'zone_id', 'entry', 'exit'])


class PathDecomposition(namedtuple('PathDecomposition', ['parts'])):
    """Ordered parts of a trip path, alternating between the FSRN and closed zones."""

    __slots__ = ()

    def node_path(self):
        """Concatenate the parts back into the node path they came from."""
        nodes = []
        for part in self.parts:
            nodes.extend(part.nodes if not nodes else part.nodes[1:])
        return nodes


class RoadNetwork(object):
    """
    Immutable directed road network.

    Args:
        nodes: iterable of `Node`.
        segments: iterable of `Segment`.

    Raises:
        InputError: if a segment references an unknown node, a segment key
            repeats, a length or lane count is out of range, or a turn refers
            to a segment that does not leave the junction.
    """

    def __init__(self, nodes, segments):
        self.graph = nx.DiGraph()
        for node in nodes:
            if node.node_id in self.graph:
                raise InputError('duplicate node {0}'.format(node.node_id))
            self.graph.add_node(node.node_id, node=node)

        for segment in segments:
            key = (segment.upstream, segment.downstream)
            for node_id in key:
                if node_id not in self.graph:
                    raise InputError('segment {0} references unknown node {1}'.format(ingest.make_road_id(*key), node_id))
            if segment.upstream == segment.downstream:
                raise InputError('segment {0} is a self loop'.format(ingest.make_road_id(*key)))
            if self.graph.has_edge(*key):
                raise InputError('duplicate segment {0}'.format(ingest.make_road_id(*key)))
            if not segment.length > 0:
                raise InputError('segment {0} must have a positive length'.format(ingest.make_road_id(*key)))
            if segment.lane_count < 1:
                raise InputError('segment {0} must have at least one lane'.format(ingest.make_road_id(*key)))
            self.graph.add_edge(segment.upstream, segment.downstream, segment=segment)

        for upstream, downstream, data in self.graph.edges(data=True):
            turns = data['segment'].turns
            for next_node in (turns or {}):
                if not self.graph.has_edge(downstream, next_node):
                    raise InputError('turn from {0} to unknown segment {1}'.format(
                        ingest.make_road_id(upstream, downstream), ingest.make_road_id(downstream, next_node)
                    ))

    @classmethod
    def from_rows(cls, road_rows, node_rows):
        """Build a network from road network rows plus the node list."""
        nodes = [Node(row.node_id, row.avi, row.lon, row.lat) for row in node_rows]
        segments = []
        for row in road_rows:
            upstream, downstream = ingest.split_road_id(row.road_id)
            turns = None
            if row.downstream_roads:
                turns = dict(
                    (ingest.split_road_id(next_road)[1], turn)
                    for next_road, turn in zip(row.downstream_roads, row.turns)
                )
            segments.append(Segment(upstream, downstream, row.length, row.lane_count, turns, row.geometry))
        return cls(nodes, segments)

    def to_rows(self):
        """Inverse of `from_rows`: (road rows sorted by ROADID, node rows sorted by NODEID)."""
        road_rows = []
        for segment in self.segments():
            next_nodes = sorted(segment.turns or {})
            road_rows.append(ingest.RoadNetworkRow(
                road_id=ingest.make_road_id(segment.upstream, segment.downstream),
                lane_count=segment.lane_count,
                turns=tuple(segment.turns[next_node] for next_node in next_nodes),
                downstream_roads=tuple(ingest.make_road_id(segment.downstream, next_node) for next_node in next_nodes),
                geometry=segment.geometry or self.straight_geometry(segment.upstream, segment.downstream),
                length=segment.length,
            ))
        node_rows = [
            ingest.NodeRow(node.node_id, node.avi, node.lon or 0.0, node.lat or 0.0)
            for node in self.nodes()
        ]
        return road_rows, node_rows

    def straight_geometry(self, upstream, downstream):
        """WKT of the straight line between two nodes' coordinates."""
        start = self.node(upstream)
        end = self.node(downstream)
        return LineString([(start.lon or 0.0, start.lat or 0.0), (end.lon or 0.0, end.lat or 0.0)]).wkt

    def nodes(self):
        """All nodes, sorted by ID."""
        return [self.graph.nodes[node_id]['node'] for node_id in sorted(self.graph.nodes)]

    def node(self, node_id):
        """Return the `Node` with the given ID, raising InputError if unknown."""
        if node_id not in self.graph:
            raise InputError('unknown node {0}'.format(node_id))
        return self.graph.nodes[node_id]['node']

    def has_node(self, node_id):
        return node_id in self.graph

    def avi_nodes(self):
        """IDs of AVI-equipped nodes, sorted."""
        return sorted(node.node_id for node in self.nodes() if node.avi)

    def is_avi(self, node_id):
        return self.node(node_id).avi

    def segments(self):
        """All segments, sorted by key."""
        return [self.graph.edges[key]['segment'] for key in sorted(self.graph.edges)]

    def segment(self, upstream, downstream):
        """Return the segment from `upstream` to `downstream`, raising InputError if absent."""
        if not self.graph.has_edge(upstream, downstream):
            raise InputError('unknown segment {0}'.format(ingest.make_road_id(upstream, downstream)))
        return self.graph.edges[upstream, downstream]['segment']

    def has_segment(self, upstream, downstream):
        return self.graph.has_edge(upstream, downstream)

    def successors(self, node_id):
        return sorted(self.graph.successors(node_id))

    def turn_allowed(self, upstream, junction, next_node):
        """True if a vehicle on segment (upstream, junction) may continue to `next_node`."""
        turns = self.segment(upstream, junction).turns
        return turns is None or next_node in turns

    def turn_code(self, upstream, junction, next_node):
        """The turn code of the movement, defaulting to straight when unrestricted."""
        turns = self.segment(upstream, junction).turns
        if not turns:
            return DEFAULT_TURN
        return turns.get(next_node, DEFAULT_TURN)

    def path_length(self, node_path):
        """Sum of segment lengths along a node path."""
        return sum(self.segment(upstream, downstream).length for upstream, downstream in zip(node_path, node_path[1:]))

    def without_nodes(self, removed):
        """A copy of the network without the given nodes and their segments."""
        removed = set(removed)
        nodes = [node for node in self.nodes() if node.node_id not in removed]
        segments = []
        for segment in self.segments():
            if segment.upstream in removed or segment.downstream in removed:
                continue
            turns = segment.turns
            if turns is not None:
                turns = dict((next_node, code) for next_node, code in turns.items() if next_node not in removed)
            segments.append(segment._replace(turns=turns))
        return RoadNetwork(nodes, segments)

    def __eq__(self, other):
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        return self.nodes() == other.nodes() and self.segments() == other.segments()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return 'RoadNetwork({0} nodes, {1} segments)'.format(self.graph.number_of_nodes(), self.graph.number_of_edges())


def _check_max_hops(max_hops):
    if max_hops < 1:
        raise InputError('max_hops must be at least 1, got {0}'.format(max_hops))


def _walk(net, path, max_hops):
    """
    Yield every extension of `path` that stops at the first AVI node reached.

    Interior nodes are non-AVI, no node repeats, turn restrictions are
    respected and no path has more than `max_hops` segments.
    """
    junction = path[-1]
    for successor in net.successors(junction):
        if successor in path:
            continue
        if len(path) > 1 and not net.turn_allowed(path[-2], junction, successor):
            continue
        extended = path + [successor]
        if net.is_avi(successor):
            yield extended
        elif len(extended) - 1 < max_hops:
            for found in _walk(net, extended, max_hops):
                yield found


def _walk_to(net, path, target, max_hops):
    """Like `_walk` but continues through AVI nodes until `target` is reached."""
    junction = path[-1]
    for successor in net.successors(junction):
        if successor in path:
            continue
        if len(path) > 1 and not net.turn_allowed(path[-2], junction, successor):
            continue
        extended = path + [successor]
        if successor == target:
            yield extended
        elif len(extended) - 1 < max_hops:
            for found in _walk_to(net, extended, target, max_hops):
                yield found


def _paths_by_destination(net, source, max_hops):
    paths = defaultdict(list)
    for path in _walk(net, [source], max_hops):
        paths[path[-1]].append(path)
    return paths


def enumerate_paths(net, i, j, max_hops=DEFAULT_MAX_HOPS, through_avi=False):
    """
    Every simple path from `i` to `j` whose interior nodes all lack AVI.

    With `through_avi`, interior AVI nodes are allowed too: the paths a
    vehicle may have taken when the cameras on the way missed it.

    Returns:
        A list of node ID lists in lexicographic order.

    Raises:
        InputError: unknown nodes, i == j, endpoints without AVI or max_hops < 1.
    """
    _check_max_hops(max_hops)
    if i == j:
        raise InputError('path endpoints must differ, got {0} twice'.format(i))
    for node_id in (i, j):
        if not net.is_avi(node_id):
            raise InputError('node {0} is not AVI-equipped'.format(node_id))
    if through_avi:
        return sorted(_walk_to(net, [i], j, max_hops))
    return sorted(path for path in _walk(net, [i], max_hops) if path[-1] == j)


def verify_full_sensing(net, max_hops=DEFAULT_MAX_HOPS):
    """
    Check that every ordered pair of AVI nodes is joined by at most one path.

    Returns:
        FullSensingReport whose `violations` lists (i, j, path count) for every
        pair with two or more paths, sorted by (i, j).
    """
    _check_max_hops(max_hops)
    violations = []
    for source in net.avi_nodes():
        for destination, paths in sorted(_paths_by_destination(net, source, max_hops).items()):
            if len(paths) >= 2:
                violations.append((source, destination, len(paths)))
    return FullSensingReport(is_fsrn=not violations, violations=violations)


def candidate_path_count(net, records, max_hops=DEFAULT_MAX_HOPS):
    """
    Number of node paths consistent with a sequence of consecutive plate observations.

    0 means the observations cannot be connected, 1 means the path is determined.
    """
    if len(records) < 2:
        raise InputError('at least two records are needed, got {0}'.format(len(records)))
    count = 1
    for i, j in zip(records, records[1:]):
        count *= len(enumerate_paths(net, i, j, max_hops))
        if count == 0:
            break
    return count


def extract_fsrn(net, max_hops=DEFAULT_MAX_HOPS):
    """
    Carve a full-sensing subnetwork out of `net`.

    Non-AVI nodes are removed greedily, each time the one lying on the most
    ambiguous paths (smallest ID on ties), until the remainder is
    full-sensing.  This is a heuristic and does not minimise zone area.

    Returns:
        (fsrn, zones): the subnetwork and the closed traffic zones holding
        every eliminated segment.

    Raises:
        ExtractionError: the network has no AVI node, or ambiguity remains that
            no node removal can resolve.
    """
    _check_max_hops(max_hops)
    if not net.avi_nodes():
        raise ExtractionError('no AVI-equipped intersection: full sensing is impossible')

    fsrn = net
    removed = []
    while True:
        participation = Counter()
        for source in fsrn.avi_nodes():
            for _destination, paths in _paths_by_destination(fsrn, source, max_hops).items():
                if len(paths) < 2:
                    continue
                for path in paths:
                    participation.update(path[1:-1])
        if not participation:
            if verify_full_sensing(fsrn, max_hops).is_fsrn:
                break
            raise ExtractionError('ambiguous paths without any removable intersection')
        worst = min(participation, key=lambda node_id: (-participation[node_id], node_id))
        log.debug('Removing intersection %s from %d ambiguous paths', worst, participation[worst])
        removed.append(worst)
        fsrn = net.without_nodes(removed)

    zones = compute_zones(net, fsrn)
    log.info('Extracted FSRN of %d segments, %d eliminated into %d zones',
             len(fsrn.segments()), sum(len(zone.interior_segments) for zone in zones), len(zones))
    return fsrn, zones


def compute_zones(net, fsrn):
    """
    Group the segments of `net` missing from `fsrn` into closed traffic zones.

    Eliminated segments sharing a node belong to the same zone, so every
    segment adjacent to an interior segment is either interior or one of the
    zone's boundary segments.
    """
    eliminated = [
        (segment.upstream, segment.downstream) for segment in net.segments()
        if not fsrn.has_segment(segment.upstream, segment.downstream)
    ]
    adjacency = nx.Graph()
    adjacency.add_edges_from(eliminated)

    components = []
    for component_nodes in nx.connected_components(adjacency):
        interior_segments = sorted(key for key in eliminated if key[0] in component_nodes)
        boundary_segments = sorted(
            (segment.upstream, segment.downstream) for segment in fsrn.segments()
            if segment.upstream in component_nodes or segment.downstream in component_nodes
        )
        interior_nodes = sorted(node_id for node_id in component_nodes if not fsrn.has_node(node_id))
        components.append((interior_segments, boundary_segments, interior_nodes))

    components.sort(key=lambda component: component[0][0])
    return [
        TrafficZone(
            zone_id='Z{0}'.format(index),
            boundary_segments=frozenset(boundary),
            interior_segments=frozenset(interior),
            interior_nodes=frozenset(nodes),
        )
        for index, (interior, boundary, nodes) in enumerate(components, start=1)
    ]


def decompose_trip(fsrn, zones, node_path):
    """
    Split a node path into parts on the FSRN and parts inside closed zones.

    Consecutive parts share their junction node.  An inner-zone part's entry
    (exit) is None when the path starts (ends) inside the zone.

    Raises:
        ModelInconsistencyError: a segment of the path is neither on the FSRN
            nor inside any zone.
    """
    if len(node_path) < 2:
        if len(node_path) == 1 and fsrn.has_node(node_path[0]):
            return PathDecomposition([PathPart(ON_FSRN, list(node_path), None, None, None)])
        raise InputError('cannot decompose path {0!r}'.format(node_path))

    zone_of_segment = {}
    for zone in zones:
        for key in zone.interior_segments:
            zone_of_segment[key] = zone.zone_id

    labels = []
    for key in zip(node_path, node_path[1:]):
        if fsrn.has_segment(*key):
            labels.append(None)
        elif key in zone_of_segment:
            labels.append(zone_of_segment[key])
        else:
            raise ModelInconsistencyError(
                'segment {0} is neither on the full-sensing network nor in a traffic zone'.format(
                    ingest.make_road_id(*key)
                )
            )

    parts = []
    start = 0
    for index in range(1, len(labels) + 1):
        if index < len(labels) and labels[index] == labels[start]:
            continue
        nodes = list(node_path[start:index + 1])
        zone_id = labels[start]
        if zone_id is None:
            parts.append(PathPart(ON_FSRN, nodes, None, None, None))
        else:
            entry = nodes[0] if fsrn.has_node(nodes[0]) else None
            exit_node = nodes[-1] if fsrn.has_node(nodes[-1]) else None
            parts.append(PathPart(INNER_ZONE, nodes, zone_id, entry, exit_node))
        start = index
    return PathDecomposition(parts)


def zones_to_yaml(zones):
    """Serialize zones as a YAML document."""
    return yaml.safe_dump([
        {
            'zone_id': zone.zone_id,
            'boundary_segments': [ingest.make_road_id(*key) for key in sorted(zone.boundary_segments)],
            'interior_segments': [ingest.make_road_id(*key) for key in sorted(zone.interior_segments)],
            'interior_nodes': sorted(zone.interior_nodes),
        }
        for zone in zones
    ], default_flow_style=False)


def zones_from_yaml(stream):
    """Inverse of `zones_to_yaml`."""
    return [
        TrafficZone(
            zone_id=entry['zone_id'],
            boundary_segments=frozenset(ingest.split_road_id(road_id) for road_id in entry['boundary_segments']),
            interior_segments=frozenset(ingest.split_road_id(road_id) for road_id in entry['interior_segments']),
            interior_nodes=frozenset(entry['interior_nodes']),
        )
        for entry in (yaml.safe_load(stream) or [])
    ]


def load_network(road_file, node_file):
    """Read a network from open road network and node table files."""
    return RoadNetwork.from_rows(
        ingest.read_table(ingest.ROAD_NETWORK, road_file),
        ingest.read_table(ingest.NODE, node_file),
    )


def save_network(net, road_file, node_file):
    """Write a network to open road network and node table files."""
    road_rows, node_rows = net.to_rows()
    ingest.write_table(ingest.ROAD_NETWORK, road_rows, road_file)
    ingest.write_table(ingest.NODE, node_rows, node_file)


class RoadNetworkMixin(object):
    """
    Parameters locating a road network.

    Parameters:
        data_dir: directory holding `network.csv` and `nodes.csv`.
        max_hops: upper bound on the number of segments of any searched path.
    """
    data_dir = luigi.Parameter()
    max_hops = luigi.IntParameter(
        default=DEFAULT_MAX_HOPS,
        config_path={'section': 'road-network', 'name': 'max_hops'},
    )

    def network_requirements(self):
        return {
            'network': ExternalURL(url_path_join(self.data_dir, 'network.csv')),
            'nodes': ExternalURL(url_path_join(self.data_dir, 'nodes.csv')),
        }

    def read_network(self, inputs):
        with inputs['network'].open('r') as road_file, inputs['nodes'].open('r') as node_file:
            return load_network(road_file, node_file)


class VerifyNetworkTask(RoadNetworkMixin, OverwriteOutputMixin, luigi.Task):
    """Writes a YAML report stating whether the network is full-sensing."""

    output_root = luigi.Parameter()

    def requires(self):
        return self.network_requirements()

    def output(self):
        return get_target_from_url(url_path_join(self.output_root, 'verify-net.yaml'))

    def run(self):
        self.remove_output_on_overwrite()
        net = self.read_network(self.input())
        report = verify_full_sensing(net, self.max_hops)
        log.info('Network %s full-sensing, %d ambiguous pairs', 'is' if report.is_fsrn else 'is not',
                 len(report.violations))
        with self.output().open('w') as output_file:
            yaml.safe_dump({
                'is_fsrn': report.is_fsrn,
                'violations': [
                    {'from': i, 'to': j, 'paths': count} for i, j, count in report.violations
                ],
            }, output_file, default_flow_style=False)


class ExtractFsrnTask(RoadNetworkMixin, OverwriteOutputMixin, luigi.Task):
    """Writes the extracted full-sensing network and its closed traffic zones."""

    output_root = luigi.Parameter()

    def requires(self):
        return self.network_requirements()

    def output(self):
        return {
            'network': get_target_from_url(url_path_join(self.output_root, 'fsrn', 'network.csv')),
            'nodes': get_target_from_url(url_path_join(self.output_root, 'fsrn', 'nodes.csv')),
            'zones': get_target_from_url(url_path_join(self.output_root, 'zones.yaml')),
        }

    def run(self):
        self.remove_output_on_overwrite()
        net = self.read_network(self.input())
        fsrn, zones = extract_fsrn(net, self.max_hops)
        outputs = self.output()
        with outputs['network'].open('w') as road_file, outputs['nodes'].open('w') as node_file:
            save_network(fsrn, road_file, node_file)
        with outputs['zones'].open('w') as zone_file:
            zone_file.write(zones_to_yaml(zones))
