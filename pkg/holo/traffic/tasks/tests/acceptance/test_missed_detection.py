"""Trip building when cameras miss plates."""

import logging

from holo.traffic.tasks import ingest, netmodel, tripbuild
from holo.traffic.tasks.tests.acceptance import AcceptanceTestCase

log = logging.getLogger(__name__)

MISS_RATE = 0.05


class MissedDetectionTest(AcceptanceTestCase):
    """Inferred green phases against the phases the simulated vehicles actually used."""

    def setUp(self):
        super(MissedDetectionTest, self).setUp()
        self.cfg = self.corridor_scenario(recognition_miss_rate=MISS_RATE)
        self.result, self.trips = self.observe(self.cfg)
        self.truth = dict(((event.vehicle_id, event.node_id), event.time) for event in self.result.events)

    def true_phase(self, vehicle_id, approach, node_id):
        time = self.truth[(vehicle_id, node_id)]
        return self.result.plans.phase_containing(node_id, approach, netmodel.DEFAULT_TURN, time)

    def test_true_phase_among_candidates(self):
        inferred = 0
        for trip in self.trips:
            observed = [k for k, passing in enumerate(trip.passings) if passing.source == ingest.OBSERVED]
            for a, b in zip(observed, observed[1:]):
                if b == a + 1:
                    continue
                path = [passing.node_id for passing in trip.passings[a:b + 1]]
                graph = tripbuild.infer_passing_times(
                    self.result.net, path, trip.passings[a].time, trip.passings[b].time,
                    self.result.plans, tripbuild.DEFAULT_V_MIN,
                )
                self.assertFalse(graph.is_empty)
                for k in range(1, len(path) - 1):
                    inferred += 1
                    self.assertIn(self.true_phase(trip.vehicle_id, path[k - 1], path[k]), graph.layers[k])
        self.assertGreater(inferred, 0)

    def test_inferred_intervals_contain_truth(self):
        for offset in range(3):
            cfg = self.cfg._replace(seed=self.cfg.seed + offset)
            result, trips = self.observe(cfg) if offset else (self.result, self.trips)
            truth = dict(((event.vehicle_id, event.node_id), event.time) for event in result.events)
            trips = [trip for trip in trips if trip.inferred_count]
            containing = 0
            for trip in trips:
                inferred = [passing for passing in trip.passings if passing.source == ingest.INFERRED]
                if all(passing.g_start <= truth[(trip.vehicle_id, passing.node_id)] <= passing.g_end
                       for passing in inferred):
                    containing += 1
                else:
                    self.assertIn(tripbuild.DISCONNECTED, trip.flags, trip.vehicle_id)
            log.info('Seed %d: %d of %d trips with inferred passings hold the true passing times',
                     cfg.seed, containing, len(trips))
            self.assertGreater(len(trips), 0)
            self.assertGreaterEqual(containing, 0.95 * len(trips))

    def test_unambiguous_phases_are_the_true_ones(self):
        inferred = 0
        ambiguous = 0
        for trip in self.trips:
            for previous, passing in zip(trip.passings, trip.passings[1:]):
                if passing.source != ingest.INFERRED:
                    continue
                inferred += 1
                if trip.flags & set([tripbuild.MULTIPLE_CHAINS, tripbuild.DISCONNECTED]):
                    ambiguous += 1
                    continue
                expected = self.true_phase(trip.vehicle_id, previous.node_id, passing.node_id)
                self.assertEqual((passing.g_start, passing.g_end), (expected.g_start, expected.g_end),
                                 '{0} at {1}'.format(trip.vehicle_id, passing.node_id))
        log.info('%d of %d inferred passings belong to trips with several candidate chains', ambiguous, inferred)
        self.assertGreater(inferred, 0)

    def test_missed_cameras_are_flagged(self):
        for trip in self.trips:
            if any(passing.source == ingest.INFERRED for passing in trip.passings):
                self.assertIn(tripbuild.MISSED_DETECTION, trip.flags)
