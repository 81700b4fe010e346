"""
Oracle-scale checks of the whole pipeline.

These run far longer than the unit tests and are excluded from the default
run by their `acceptance` attribute; `nose2 -A acceptance` runs only them.
"""

import logging
import os
from io import StringIO

from holo.traffic.tasks import simcore, tripbuild
from holo.traffic.tasks.tests import unittest

log = logging.getLogger(__name__)

# Twenty 90 s cycles of a three-segment corridor carrying about 200 vehicles.
CORRIDOR_SCENARIO = """
start: '2020-09-01 08:00:00'
horizon: 1800
seed: 1
corridor:
  - {length: 400}
  - {length: 350}
  - {length: 300}
signals:
  default: {cycle: 90, green: 45}
  N2: {cycle: 90, green: 45, offset: 20}
  N3: {cycle: 90, green: 50, offset: 40}
demand: {rate: 0.11, large_share: 0.1}
params: {q_m: 0.36, k_m: 0.06, k_j: 0.19, v_f: 15.0}
recognition_miss_rate: 0.0
"""


class AcceptanceTestCase(unittest.TestCase):
    """
    Base class of the acceptance suites.

    `ACCEPTANCE_SEED` in the environment shifts every seed the suites draw,
    to rerun them on fresh random instances.
    """

    acceptance = 1

    def setUp(self):
        self.seed_offset = int(os.getenv('ACCEPTANCE_SEED', '0'))
        if self.seed_offset:
            log.info('Shifting acceptance seeds by %d', self.seed_offset)

    def seed(self, value):
        return value + self.seed_offset

    def corridor_scenario(self, **changes):
        cfg = simcore.load_scenario(StringIO(CORRIDOR_SCENARIO))
        return cfg._replace(seed=self.seed(cfg.seed), **changes)

    def observe(self, cfg):
        """Simulate a scenario and rebuild its trips from the camera records."""
        result = simcore.simulate_ground_truth(cfg, simcore.generate_demand(cfg))
        rows = simcore.emit_lpr(result.events, result.net.avi_nodes(), cfg.recognition_miss_rate, cfg.seed,
                                 cfg.lpr_resolution)
        trips = tripbuild.build_trips(tripbuild.lpr_rows_to_records(rows), result.net, result.plans)
        return result, trips
