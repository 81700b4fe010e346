"""Passing time inference on random corridors and irregular signal plans."""

import random

from holo.traffic.tasks import tripbuild
from holo.traffic.tasks.tests.acceptance import AcceptanceTestCase
from holo.traffic.tasks.tests.fixtures.helpers import brute_force_chains, corridor
from holo.traffic.tasks.tripbuild import GreenPhase, SignalPlan

CORRIDOR_COUNT = 100
MAX_PHASES = 8


def irregular_phases(rng, node_id, approach):
    """Up to MAX_PHASES non-overlapping greens of random start and duration."""
    phases = []
    t = rng.uniform(0.0, 100.0)
    for _ in range(rng.randint(1, MAX_PHASES)):
        g_start = t + rng.uniform(5.0, 120.0)
        g_end = g_start + rng.uniform(5.0, 60.0)
        phases.append(GreenPhase(node_id, approach, 'S', g_start, g_end))
        t = g_end
    return phases


class PassingGraphAcceptanceTest(AcceptanceTestCase):
    """Passing graphs against exhaustive chain enumeration."""

    def test_random_corridors(self):
        rng = random.Random(self.seed(1))
        empty = 0
        for _ in range(CORRIDOR_COUNT):
            node_count = rng.randint(3, 5)
            nodes, net = corridor(node_count, [0, node_count - 1], length=rng.choice([80.0, 200.0, 450.0]))
            phases = []
            for k in range(1, node_count - 1):
                phases.extend(irregular_phases(rng, nodes[k], nodes[k - 1]))
            plans = SignalPlan(phases)
            t_i = rng.uniform(0.0, 300.0)
            t_j = t_i + rng.uniform(10.0, 600.0)
            v_min = rng.choice([tripbuild.DEFAULT_V_MIN, 3.0])

            expected = brute_force_chains(net, nodes, t_i, t_j, plans, v_min)
            graph = tripbuild.infer_passing_times(net, nodes, t_i, t_j, plans, v_min)

            self.assertTrue(graph.proved)
            self.assertEqual(graph.is_empty, not expected)
            self.assertEqual(graph.chain_count(), len(expected))
            self.assertEqual(sorted(graph.chains()), sorted(expected))
            if graph.is_empty:
                empty += 1
                continue
            for k in range(1, node_count - 1):
                self.assertEqual(set(graph.layers[k]), set(chain[k] for chain in expected))

            schedule = tripbuild.resolve_passing_schedule(graph, t_i, t_j)
            earliest = next(graph.chains())
            self.assertEqual([passing.phase for passing in schedule[1:-1]], list(earliest[1:-1]))
            times = [passing.time for passing in schedule]
            self.assertEqual(times[0], t_i)
            self.assertEqual(times[-1], t_j)
        self.assertLess(empty, CORRIDOR_COUNT)
