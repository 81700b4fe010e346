"""
  Contains common methods for helping unit tests
"""

import itertools

import networkx as nx

from holo.traffic.tasks.netmodel import Node, RoadNetwork, Segment
from holo.traffic.tasks.tripbuild import GreenPhase


def build_network(edges, avi, length=100.0, lanes=1, turns=None, two_way=False):
    """
    Build a RoadNetwork from (upstream, downstream) pairs.

    Every node mentioned in `edges` or `avi` exists; nodes in `avi` are
    AVI-equipped.  `turns` optionally maps a segment key to its turn dict.
    """
    turns = turns or {}
    keys = list(edges)
    if two_way:
        keys += [(downstream, upstream) for upstream, downstream in edges]
    node_ids = set(avi) | set(itertools.chain.from_iterable(keys))
    nodes = [Node(node_id, node_id in avi, None, None) for node_id in sorted(node_ids)]
    segments = [
        Segment(upstream, downstream, length, lanes, turns.get((upstream, downstream)), None)
        for upstream, downstream in sorted(set(keys))
    ]
    return RoadNetwork(nodes, segments)


def grid_network(size, non_avi=()):
    """A two-way `size` x `size` grid with nodes named 'r<row>c<col>'."""
    name = 'r{0}c{1}'.format
    edges = []
    for row in range(size):
        for col in range(size):
            if col + 1 < size:
                edges.append((name(row, col), name(row, col + 1)))
            if row + 1 < size:
                edges.append((name(row, col), name(row + 1, col)))
    nodes = [name(row, col) for row in range(size) for col in range(size)]
    return build_network(edges, [node for node in nodes if node not in non_avi], two_way=True)


def sample_network():
    """
    A small city with AVI cameras everywhere but at E, J and K.

    J and K sit between the cameras at B, F, G and H and create ambiguous
    paths (B to G, F to H); E is the single unobserved node between B and D.
    """
    edges = [
        ('A', 'B'), ('B', 'C'), ('C', 'D'), ('B', 'E'), ('E', 'D'), ('D', 'H'), ('B', 'J'), ('J', 'K'),
        ('K', 'F'), ('J', 'G'), ('B', 'G'), ('K', 'H'), ('F', 'H'), ('F', 'I'), ('H', 'I'),
    ]
    return build_network(edges, 'ABCDFGHI', two_way=True)


def random_network(rng, max_nodes=12, edge_probability=0.25, avi_probability=0.6):
    """A random directed network for oracle comparisons."""
    count = rng.randint(2, max_nodes)
    node_ids = ['n{0:02d}'.format(index) for index in range(count)]
    edges = [
        (upstream, downstream) for upstream, downstream in itertools.permutations(node_ids, 2)
        if rng.random() < edge_probability
    ]
    avi = [node_id for node_id in node_ids if rng.random() < avi_probability]
    return build_network(edges, avi)


def brute_force_path_counts(net, max_hops):
    """Count qualifying paths per ordered AVI pair by exhaustive simple path enumeration."""
    counts = {}
    avi = net.avi_nodes()
    for i, j in itertools.permutations(avi, 2):
        count = 0
        for path in nx.all_simple_paths(net.graph, i, j, cutoff=max_hops):
            if any(net.is_avi(node_id) for node_id in path[1:-1]):
                continue
            if all(net.turn_allowed(path[k - 1], path[k], path[k + 1]) for k in range(1, len(path) - 1)):
                count += 1
        counts[(i, j)] = count
    return counts


def zone_closure_violations(net, zones):
    """Interior segments having an adjacent segment that is neither interior nor boundary."""
    violations = []
    for zone in zones:
        allowed = zone.interior_segments | zone.boundary_segments
        for upstream, downstream in zone.interior_segments:
            for segment in net.segments():
                key = (segment.upstream, segment.downstream)
                touches = set(key) & set((upstream, downstream))
                if touches and key not in allowed:
                    violations.append((zone.zone_id, (upstream, downstream), key))
    return violations


def corridor(node_count, avi, length=300.0):
    nodes = ['P{0}'.format(index) for index in range(node_count)]
    return nodes, build_network(list(zip(nodes, nodes[1:])), [nodes[index] for index in avi], length=length)


def feasible(previous, current, length, v_min):
    """A transition between two phases, checked from first principles."""
    if current.g_end <= previous.g_start:
        return False
    return length / v_min > max(current.g_start - previous.g_end, 0.0)


def brute_force_chains(net, path, t_i, t_j, plans, v_min):
    """Every valid phase chain along `path`, by exhaustive enumeration."""
    candidates = []
    for k in range(1, len(path) - 1):
        phases = plans.phases(path[k], path[k - 1], 'S')
        candidates.append([phase for phase in phases if phase.g_end >= t_i and phase.g_start <= t_j])
    start = GreenPhase(path[0], None, None, t_i, t_i)
    end = GreenPhase(path[-1], None, None, t_j, t_j)
    chains = []
    for middle in itertools.product(*candidates):
        chain = (start,) + middle + (end,)
        lengths = [net.segment(path[k], path[k + 1]).length for k in range(len(path) - 1)]
        if all(feasible(chain[k], chain[k + 1], lengths[k], v_min) for k in range(len(chain) - 1)):
            chains.append(chain)
    return chains
