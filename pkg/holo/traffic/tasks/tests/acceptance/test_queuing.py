"""Queue discrimination over randomized single streams."""

import random
from collections import defaultdict

from holo.traffic.tasks import ingest, reconstruct, simcore, tripbuild
from holo.traffic.tasks.reconstruct import StreamObservation, StreamParams, StreamVehicle
from holo.traffic.tasks.simcore import Arrival
from holo.traffic.tasks.tests.acceptance import AcceptanceTestCase

STREAM_COUNT = 200
FLAG_LISTS = 1000
START = 1598947200.0  # 2020-09-01 08:00:00


class OneWaveAcceptanceTest(AcceptanceTestCase):
    """At most one stop wave per cycle."""

    def test_random_flags(self):
        rng = random.Random(self.seed(4))
        for _ in range(FLAG_LISTS):
            flags = [rng.random() < 0.3 for _ in range(rng.randint(0, 30))]
            wave = reconstruct.enforce_one_wave(flags)
            self.assertEqual(len(wave), len(flags))
            queued = sum(wave)
            self.assertEqual(wave, [True] * queued + [False] * (len(flags) - queued))
            self.assertEqual(queued, max([index + 1 for index, flag in enumerate(flags) if flag] or [0]))
            self.assertEqual(reconstruct.enforce_one_wave(wave), wave)


class StreamQueuingAcceptanceTest(AcceptanceTestCase):
    """Simulated streams reconstructed with the default queue threshold."""

    def random_stream(self, rng, params):
        length = rng.choice([200.0, 300.0, 450.0])
        lane_count = rng.choice([1, 2])
        cycle = rng.choice([60.0, 90.0, 120.0])
        green = rng.uniform(0.35, 0.65) * cycle
        phases = tripbuild.fixed_time_phases('B', 'A', 'S', cycle, green, START + rng.uniform(0, cycle),
                                             START - cycle, START + 3600)
        arrivals = []
        t = START
        for index in range(rng.randint(5, 60)):
            t += params.headway + rng.expovariate(0.15)
            arrivals.append(Arrival('v{0:03d}'.format(index), ingest.REGULAR_VEHICLE, t, ['S']))
        passed = simcore.discharge_stream([(arrival, arrival.time) for arrival in arrivals], phases, length,
                                          lane_count, params)
        vehicles = [
            StreamVehicle(arrival.vehicle_id, arrival.vehicle_type, 'S', arrival.time, None, exit_time, None)
            for arrival, exit_time, _breakpoints, _queued, _offset in passed
        ]
        truth = [(queued, offset) for _arrival, _exit_time, _breakpoints, queued, offset in passed]
        return StreamObservation(('A', 'B'), 'S', length, lane_count, vehicles), tripbuild.SignalPlan(phases), truth

    def test_queued_prefix_and_stop_positions(self):
        rng = random.Random(self.seed(8))
        queued_total = 0
        vehicle_total = 0
        agreeing = 0
        for _ in range(STREAM_COUNT):
            params = StreamParams(lane_aware=rng.random() < 0.5)
            obs, plans, truth = self.random_stream(rng, params)
            greens = plans.phases('B', 'A', 'S')
            reconstruction = reconstruct.StreamReconstruction(obs, plans, params)

            vehicle_total += len(truth)
            agreeing += sum(
                1 for trajectory, expected in zip(reconstruction.trajectories, truth)
                if (trajectory.queued, trajectory.stop_position) == expected
            )
            cycles = defaultdict(list)
            for trajectory in reconstruction.trajectories:
                cycles[reconstruction.cycle_of(trajectory.end_time)].append(trajectory)
            for cycle, members in cycles.items():
                self.assertTrue(greens[cycle].g_start <= members[0].end_time)
                flags = [trajectory.queued for trajectory in members]
                self.assertEqual(flags, reconstruct.enforce_one_wave(flags))
                for order, trajectory in enumerate([t for t in members if t.queued], start=1):
                    queued_total += 1
                    if trajectory.stop_position is not None:
                        self.assertAlmostEqual(
                            trajectory.stop_position, reconstruct.stop_position(order, params, obs.lane_count)
                        )
                        self.assertLessEqual(trajectory.stop_position, obs.length)
            self.assertEqual(len(reconstruction.iterations), max(cycles) - min(cycles) + 1)
        self.assertGreater(queued_total, 0)
        self.assertGreaterEqual(agreeing, 0.99 * vehicle_total)
