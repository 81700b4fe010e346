"""Reconstruction of a simulated corridor seen by every camera."""

import bisect
from collections import Counter, defaultdict

from holo.traffic.tasks import netmodel, reconstruct
from holo.traffic.tasks.reconstruct import EPSILON
from holo.traffic.tasks.tests.acceptance import AcceptanceTestCase


def time_at(trajectory, x):
    """First time a trajectory reaches position x."""
    for (t0, x0), (t1, x1) in trajectory.pieces():
        if x0 <= x <= x1 and x1 > x0:
            return t0 + (x - x0) * (t1 - t0) / (x1 - x0)
    return trajectory.end_time


class NoiselessRoundTripTest(AcceptanceTestCase):
    """Simulate, observe without misses, rebuild trips and reconstruct."""

    def setUp(self):
        super(NoiselessRoundTripTest, self).setUp()
        self.cfg = self.corridor_scenario()
        self.result, self.trips = self.observe(self.cfg)
        vehicle_types = dict((row.vehicle_id, row.vehicle_type) for row in self.result.vehicles)
        self.observations = reconstruct.build_stream_observations(self.trips, self.result.net, vehicle_types)

    def reconstruct(self, params):
        return reconstruct.reconstruct_all(self.observations, self.result.plans, params, self.cfg.seed)

    def cycle_of(self, trajectory):
        upstream, downstream = trajectory.segment
        greens = self.result.plans.phases(downstream, upstream, netmodel.DEFAULT_TURN)
        return bisect.bisect_right([green.g_start for green in greens], trajectory.end_time) - 1

    def by_segment(self, trajectories):
        streams = defaultdict(list)
        for trajectory in trajectories:
            streams[trajectory.segment].append(trajectory)
        for segment in streams:
            streams[segment].sort(key=lambda trajectory: trajectory.start_time)
        return streams

    def test_population(self):
        self.assertGreater(len(self.result.vehicles), 150)
        self.assertEqual(len(self.trips), len(self.result.vehicles))
        for trip in self.trips:
            self.assertEqual(trip.flags, frozenset())
            self.assertEqual(len(trip.passings), len(self.cfg.corridor) + 1)

    def test_endpoints_match_ground_truth(self):
        truth = dict(((t.vehicle_id, t.segment), t) for t in self.result.trajectories)
        rebuilt = self.reconstruct(self.cfg.params)
        self.assertEqual(len(rebuilt), len(truth))
        for trajectory in rebuilt:
            expected = truth[(trajectory.vehicle_id, trajectory.segment)]
            self.assertAlmostEqual(trajectory.start_time, expected.start_time, places=6)
            self.assertAlmostEqual(trajectory.end_time, expected.end_time, places=6)
            self.assertEqual(trajectory.breakpoints[-1][1], expected.breakpoints[-1][1])

    def test_cycle_exit_counts(self):
        truth = Counter((t.segment, self.cycle_of(t)) for t in self.result.trajectories)
        rebuilt = Counter((t.segment, self.cycle_of(t)) for t in self.reconstruct(self.cfg.params))
        self.assertEqual(rebuilt, truth)

    def test_kinematics(self):
        v_f = self.cfg.params.v_f
        streams = self.by_segment(self.reconstruct(self.cfg.params))
        for segment, trajectories in streams.items():
            length = self.result.net.segment(*segment).length
            for trajectory in trajectories:
                for speed in trajectory.speeds():
                    self.assertGreaterEqual(speed, -EPSILON)
                    self.assertLessEqual(speed, v_f + EPSILON)
                positions = [x for _t, x in trajectory.breakpoints]
                self.assertEqual(positions, sorted(positions))
            for first, second in zip(trajectories, trajectories[1:]):
                for fraction in (0.0, 0.25, 0.5, 0.75, 1.0):
                    x = fraction * length
                    self.assertGreaterEqual(time_at(second, x), time_at(first, x) - 1e-6,
                                            '{0} passes {1} on {2}'.format(second.vehicle_id, first.vehicle_id, segment))

    def test_queues_match_ground_truth(self):
        truth = dict(((t.vehicle_id, t.segment), t) for t in self.result.trajectories)
        rebuilt = self.reconstruct(self.cfg.params)
        agreeing = 0
        queued = 0
        for trajectory in rebuilt:
            expected = truth[(trajectory.vehicle_id, trajectory.segment)]
            if trajectory.queued != expected.queued:
                continue
            agreeing += 1
            self.assertEqual(trajectory.stop_position, expected.stop_position,
                             '{0} on {1}'.format(trajectory.vehicle_id, trajectory.segment))
            if trajectory.queued:
                queued += 1
                self.assertEqual(trajectory.breakpoints, expected.breakpoints)
        self.assertGreaterEqual(agreeing, 0.99 * len(rebuilt))
        self.assertGreater(queued, 0)

    def test_one_stop_wave_per_cycle(self):
        params = self.cfg.params
        streams = self.by_segment(self.reconstruct(params))
        queued_total = 0
        for trajectories in streams.values():
            cycles = defaultdict(list)
            for trajectory in trajectories:
                cycles[self.cycle_of(trajectory)].append(trajectory)
            for members in cycles.values():
                flags = [trajectory.queued for trajectory in members]
                self.assertEqual(flags, reconstruct.enforce_one_wave(flags))
                for order, trajectory in enumerate([t for t in members if t.queued], start=1):
                    queued_total += 1
                    if trajectory.stop_position is not None:
                        self.assertAlmostEqual(trajectory.stop_position, reconstruct.stop_position(order, params))
        self.assertGreater(queued_total, 0)
