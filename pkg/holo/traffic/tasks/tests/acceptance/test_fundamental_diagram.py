"""Speed-density fits over loop measurements of the simulated corridor, and over the curve itself."""

import numpy as np
import yaml
from scipy.optimize import brentq

from holo.traffic.tasks import analytics, detect, ingest, reconstruct, simcore
from holo.traffic.tasks.reconstruct import StreamParams
from holo.traffic.tasks.tests.acceptance import AcceptanceTestCase
from holo.traffic.tasks.tests.target import FakeTarget
from holo.traffic.tasks.util import properties

INTERVAL = 900
INTERVALS = 96
SEED_COUNT = 20
START = 1598918400.0  # 2020-09-01 00:00:00

# Loops 20 m upstream of each corridor stop line, read in 5-minute intervals
# over the 30 minutes of the corridor scenario.
CORRIDOR_LOOPS = """
fTime=2020-09-01 08:00:00
tTime=2020-09-01 08:30:00
needFCD=false
loop.1.loopId=L1
loop.1.ftNode=N0_N1
loop.1.position=20
loop.1.missingRate=0
loop.1.interval=300
loop.2.loopId=L2
loop.2.ftNode=N1_N2
loop.2.position=20
loop.2.missingRate=0
loop.2.interval=300
loop.3.loopId=L3
loop.3.ftNode=N2_N3
loop.3.position=20
loop.3.missingRate=0
loop.3.interval=300
"""


def curve_peak(params):
    """Density and flow at the maximum of k * v(k) for alpha = 1."""
    k_m = params.k_j * (1.0 / (1.0 + params.beta)) ** (1.0 / params.beta)
    return k_m, params.v_f * k_m * params.beta / (1.0 + params.beta)


def synthetic_loop_rows(params, seed):
    """
    A day of 15-minute loop rows lying on the curve, either branch.

    Counts are whole vehicles and speeds carry the three decimals of a loop file.
    """
    rng = np.random.default_rng(seed)
    k_m, q_peak = curve_peak(params)

    def flow(k):
        return k * analytics.speed_density_curve(k, params.k_j, params.v_f, 1.0, params.beta)

    rows = []
    for index in range(INTERVALS):
        count = int(round(rng.uniform(0.3, 0.95) * q_peak * INTERVAL))
        q = count / float(INTERVAL)
        if rng.random() < 0.5:
            k = brentq(lambda density: flow(density) - q, 0.0, k_m)
        else:
            k = brentq(lambda density: flow(density) - q, k_m, params.k_j)
        speed = round(float(analytics.speed_density_curve(k, params.k_j, params.v_f, 1.0, params.beta)) * 3.6, 3)
        from_time = START + index * INTERVAL
        rows.append(ingest.LoopRow(
            'A_B', from_time, from_time + INTERVAL, INTERVAL, count, count, 0, speed, speed, 'S',
        ))
    return rows


class CorridorLoopFitAcceptanceTest(AcceptanceTestCase):
    """Simulated corridor, measured by LoopDetectionTask, turned into samples and fitted."""

    def measure(self, cfg):
        """Loop rows of every corridor loop for one simulated run."""
        result = simcore.simulate_ground_truth(cfg, simcore.generate_demand(cfg))
        road_rows, node_rows = result.net.to_rows()
        network = ingest.table_to_string(ingest.ROAD_NETWORK, road_rows)
        nodes = ingest.table_to_string(ingest.NODE, node_rows)
        store = ingest.table_to_string(ingest.TRAJECTORY, reconstruct.trajectories_to_rows(result.trajectories))
        rows = []
        for loop_id in ('L1', 'L2', 'L3'):
            task = detect.LoopDetectionTask(data_dir='/tmp/holo', properties_file='/tmp/holo/measure.properties',
                                            output_root='/tmp/holo/out', loop_id=loop_id)
            outputs = {'loop': FakeTarget(), 'occupancy': FakeTarget()}
            task.measurement = lambda: properties.parse_properties(CORRIDOR_LOOPS)
            task.input = lambda: {
                'network': FakeTarget(network),
                'nodes': FakeTarget(nodes),
                'trajectories': FakeTarget(store),
            }
            task.output = lambda: outputs
            task.run()
            rows.extend(ingest.read_table_from_string(ingest.LOOP, outputs['loop'].value))
        return rows

    def test_fit_over_seeds(self):
        for seed in range(SEED_COUNT):
            cfg = self.corridor_scenario()._replace(seed=self.seed(seed))
            params = cfg.params
            rows = self.measure(cfg)
            self.assertEqual(len(rows), 3 * 6)
            samples = analytics.loop_rows_to_samples(rows)
            self.assertGreaterEqual(len(samples), analytics.MIN_FIT_SAMPLES)
            for density, speed in samples:
                # Crossing speeds lie between the discharge speed and v_f.
                self.assertGreaterEqual(speed, params.capacity_speed - 1e-3)
                self.assertLessEqual(speed, params.v_f + 1e-3)
                self.assertLessEqual(density * speed, params.q_m)
            fit = analytics.fit_fundamental_diagram(samples, params.alpha, params.beta)
            self.assertGreater(fit.k_j_hat, 0.0)
            self.assertGreater(fit.q_m_hat, 0.0)
            self.assertTrue(0 < fit.k_m_hat < fit.k_j_hat)


class FundamentalDiagramAcceptanceTest(AcceptanceTestCase):
    """Fits over loop rows sampled from the default stream parameters."""

    def setUp(self):
        super(FundamentalDiagramAcceptanceTest, self).setUp()
        self.params = StreamParams()
        self.k_m, self.q_peak = curve_peak(self.params)

    def assert_recovered(self, fit):
        self.assertAlmostEqual(fit.k_j_hat / self.params.k_j, 1.0, delta=0.1)
        self.assertAlmostEqual(fit.q_m_hat / self.q_peak, 1.0, delta=0.1)

    def test_curve_peak_of_default_shape(self):
        # With alpha = 1 and beta = 0.05 the curve peaks far below the stop-line capacity q_m.
        self.assertAlmostEqual(self.q_peak, 0.0512, delta=1e-4)
        self.assertLess(self.q_peak, 0.2 * self.params.q_m)

    def test_recovery_over_seeds(self):
        for seed in range(SEED_COUNT):
            rows = synthetic_loop_rows(self.params, self.seed(seed))
            fit = analytics.fit_fundamental_diagram(analytics.loop_rows_to_samples(rows))
            self.assert_recovered(fit)
            self.assertAlmostEqual(fit.k_m_hat / self.k_m, 1.0, delta=0.1)

    def test_recovery_from_loop_files(self):
        loop_files = [FakeTarget(ingest.table_to_string(ingest.LOOP, synthetic_loop_rows(self.params, self.seed(seed))))
                      for seed in range(3)]
        task = analytics.FundamentalDiagramTask(
            loop_files=['/tmp/holo/loop{0}.csv'.format(index) for index in range(3)], output_root='/tmp/holo/out',
        )
        output = FakeTarget()
        task.input = lambda: loop_files
        task.output = lambda: output
        task.run()
        result = yaml.safe_load(output.value)
        self.assertEqual(result['samples'], 3 * INTERVALS)
        self.assert_recovered(analytics.FdFit(*[result[name] for name in analytics.FdFit._fields]))
