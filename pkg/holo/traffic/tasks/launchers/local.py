"""
Main methods for running the pipeline on a local machine.

  `holo` runs one pipeline stage per subcommand, for instance::

      holo verify-net -d /path/of/holoData
      holo measure -d /path/of/holoData -c /path/of/properties_file

  Every stage is a luigi task built with the local scheduler, so stages whose
  outputs exist are skipped unless `--overwrite` is given.  The exit code
  tells configuration errors (2) from bad or missing data (3) and from data
  that contradicts the road network model (4).

  `launch-task` runs any registered task by its class name with luigi's own
  command line.
"""

import argparse
import logging
import multiprocessing
import os
import sys
from contextlib import contextmanager

import luigi
import luigi.configuration
import stevedore
from luigi.execution_summary import LuigiStatusCode

from holo.traffic.tasks import EXTENSION_NAMESPACE, analytics, detect, netmodel, reconstruct, simcore, tripbuild
from holo.traffic.tasks.exceptions import (
    ConfigurationError, DataError, FitError, HoloError, InputError, ModelInconsistencyError,
)
from holo.traffic.tasks.util.tempdir import staged_outputs

log = logging.getLogger(__name__)

OVERRIDE_CONFIGURATION_FILE = 'override.cfg'

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIGURATION = 2
EXIT_DATA = 3
EXIT_MODEL = 4

SUCCESS_STATUSES = (LuigiStatusCode.SUCCESS, LuigiStatusCode.SUCCESS_WITH_RETRY)


def exit_code_for(exception):
    """The process exit code reporting `exception`."""
    if isinstance(exception, ConfigurationError):
        return EXIT_CONFIGURATION
    if isinstance(exception, (InputError, DataError, FitError, EnvironmentError)):
        return EXIT_DATA
    if isinstance(exception, ModelInconsistencyError):
        return EXIT_MODEL
    return EXIT_FAILURE


class WorkflowFailure(Exception):
    """A luigi run that did not complete; `failures` holds (exit code, message) per failed task."""

    def __init__(self, failures):
        super(WorkflowFailure, self).__init__('; '.join(message for _code, message in failures))
        self.failures = failures

    @property
    def exit_code(self):
        return self.failures[0][0]


class FailureLog(object):
    """
    Collects the failures luigi reports through task events.

    Tasks may run in forked worker processes, so failures travel back
    through a pipe rather than being appended to a list.
    """

    def __init__(self):
        self.queue = None

    @contextmanager
    def recording(self):
        self.queue = multiprocessing.SimpleQueue()
        try:
            yield self
        finally:
            self.queue = None

    def record(self, exception):
        if self.queue is not None:
            message = str(exception) or type(exception).__name__
            self.queue.put((exit_code_for(exception), message[:1000]))

    def drain(self):
        failures = []
        while self.queue is not None and not self.queue.empty():
            failures.append(self.queue.get())
        return failures


FAILURES = FailureLog()


@luigi.Task.event_handler(luigi.Event.FAILURE)
@luigi.Task.event_handler(luigi.Event.BROKEN_TASK)
def record_failure(task, exception):  # pylint: disable=unused-argument
    FAILURES.record(exception)


def apply_override_config():
    configuration = luigi.configuration.get_config()
    if os.path.exists(OVERRIDE_CONFIGURATION_FILE):
        log.debug('Using %s', OVERRIDE_CONFIGURATION_FILE)
        configuration.add_config_path(OVERRIDE_CONFIGURATION_FILE)


def task_graph(root):
    """Every task `root` depends on, itself included, each once."""
    tasks = {}
    pending = [root]
    while pending:
        task = pending.pop()
        if task.task_id not in tasks:
            tasks[task.task_id] = task
            pending.extend(task.deps())
    return list(tasks.values())


def run_workflow(root, jobs=1):
    """
    Build `root` and its dependencies with the local scheduler.

    The task graph is walked first, so malformed properties or parameters
    raise here with their own exception and missing inputs are reported
    before anything runs.  Outputs created by a failed run are removed.

    Raises:
        InputError: when an external input is missing.
        WorkflowFailure: when a task failed.
    """
    graph = task_graph(root)
    missing = sorted(
        target.path for task in graph if isinstance(task, luigi.ExternalTask) and not task.complete()
        for target in luigi.task.flatten(task.output())
    )
    if missing:
        raise InputError('missing input {0}'.format(', '.join(missing)))
    staged = [
        target.path for task in graph if not isinstance(task, luigi.ExternalTask)
        for target in luigi.task.flatten(task.output()) if not target.exists()
    ]

    with FAILURES.recording() as failures, staged_outputs(staged):
        result = luigi.build([root], local_scheduler=True, workers=jobs, detailed_summary=True)
        if result.status not in SUCCESS_STATUSES:
            raise WorkflowFailure(failures.drain() or [(EXIT_FAILURE, result.summary_text)])
    log.info('Completed %s', root)


def present(**kwargs):
    """Task parameters that were given, so unset ones keep their configured defaults."""
    return dict((key, value) for key, value in kwargs.items() if value is not None)


def env_int(name, default=None):
    value = os.environ.get(name)
    if value is None or value == '':
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigurationError('{0} must be an integer, got {1!r}'.format(name, value))


def print_output(task):
    for target in luigi.task.flatten(task.output()):
        with target.open('r') as output_file:
            sys.stdout.write(output_file.read())


def verify_net_task(args):
    return netmodel.VerifyNetworkTask(**present(
        data_dir=args.data_dir, output_root=args.output_root or args.data_dir, max_hops=args.max_hops,
        overwrite=args.overwrite,
    ))


def extract_fsrn_task(args):
    return netmodel.ExtractFsrnTask(**present(
        data_dir=args.data_dir, output_root=args.output_root or args.data_dir, max_hops=args.max_hops,
        overwrite=args.overwrite,
    ))


def build_trips_task(args):
    return tripbuild.BuildTripsTask(**present(
        data_dir=args.data_dir, output_root=args.output_root or args.data_dir, max_hops=args.max_hops,
        v_min=args.v_min, overwrite=args.overwrite,
    ))


def reconstruct_task(args):
    return reconstruct.ReconstructTrajectoriesTask(**present(
        data_dir=args.data_dir, output_root=args.output_root or args.data_dir, max_hops=args.max_hops,
        v_min=args.v_min, params_file=args.params, seed=args.seed, overwrite=args.overwrite,
    ))


def measure_task(args):
    return detect.MeasureWorkflow(**present(
        data_dir=args.data_dir, properties_file=args.properties, output_root=args.output_root or args.data_dir,
        trajectories=args.trajectories, max_hops=args.max_hops, seed=args.seed, overwrite=args.overwrite,
    ))


def simulate_task(args):
    return simcore.SimulateScenarioTask(**present(
        scenario_file=args.scenario, output_root=args.output_root, params_file=args.params, seed=args.seed,
        overwrite=args.overwrite,
    ))


def analyze_task(args):
    if args.lorenz:
        return analytics.LorenzCurveTask(
            profiles_file=args.lorenz, output_root=args.output_root, overwrite=args.overwrite,
        )
    if args.fundamental_diagram:
        return analytics.FundamentalDiagramTask(
            loop_files=args.fundamental_diagram, output_root=args.output_root, lane_count=args.lane_count,
            overwrite=args.overwrite,
        )
    if args.flow_consistency:
        return analytics.FlowConsistencyTask(
            loop_file=args.flow_consistency[0], reference_file=args.flow_consistency[1],
            output_root=args.output_root, overwrite=args.overwrite,
        )
    if args.travel_time_profile:
        if args.data_dir is None or args.fcd is None:
            raise ConfigurationError('--travel-time-profile needs the data directory, -d, and --fcd')
        return analytics.TravelTimeProfileTask(**present(
            data_dir=args.data_dir, fcd_file=args.fcd, segment_files=args.travel_time_profile,
            output_root=args.output_root, interval=args.interval, max_hops=args.max_hops, overwrite=args.overwrite,
        ))
    if args.data_dir is None:
        raise ConfigurationError('--profiles needs the data directory, -d')
    return analytics.TravelerProfilesTask(**present(
        data_dir=args.data_dir, output_root=args.output_root, trips=args.trips, zones_file=args.zones,
        commercial_file=args.commercial, max_hops=args.max_hops, overwrite=args.overwrite,
    ))


def build_parser():
    parser = argparse.ArgumentParser(prog='holo', description='Vehicle trajectories from camera records.')
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--jobs', type=int, help='parallel luigi workers (default: $HOLO_JOBS or 1)')
    common.add_argument('--overwrite', action='store_true', help='rerun the stage even if its outputs exist')

    network = argparse.ArgumentParser(add_help=False)
    network.add_argument('-d', '--data-dir', required=True, help='directory with network.csv and nodes.csv')
    network.add_argument('-o', '--output-root', help='where outputs go (default: the data directory)')
    network.add_argument('--max-hops', type=int, help='longest searched path, in segments')

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument('--seed', type=int, help='seed of every random draw (default: $HOLO_SEED)')

    trips = argparse.ArgumentParser(add_help=False)
    trips.add_argument('--v-min', type=float, help='minimal plausible travel speed in m/s')

    command = subparsers.add_parser('verify-net', parents=[common, network], help='check full sensing')
    command.set_defaults(make_task=verify_net_task, report=print_output)

    command = subparsers.add_parser('extract-fsrn', parents=[common, network],
                                    help='extract the full-sensing network and its traffic zones')
    command.set_defaults(make_task=extract_fsrn_task)

    command = subparsers.add_parser('build-trips', parents=[common, network, trips],
                                    help='split camera records into trips')
    command.set_defaults(make_task=build_trips_task)

    command = subparsers.add_parser('reconstruct', parents=[common, network, trips, seeded],
                                    help='reconstruct trajectories from trips')
    command.add_argument('--params', help='YAML file overriding the stream parameters')
    command.set_defaults(make_task=reconstruct_task)

    command = subparsers.add_parser('measure', parents=[common, network, seeded],
                                    help='measure loops and floating cars on the trajectories')
    command.add_argument('-c', '--properties', required=True, help='the measurement properties file')
    command.add_argument('--trajectories', help='trajectory store (default: trajectories.csv in the data directory)')
    command.set_defaults(make_task=measure_task)

    command = subparsers.add_parser('simulate', parents=[common, seeded], help='simulate a corridor scenario')
    command.add_argument('-c', '--scenario', required=True, help='the YAML scenario')
    command.add_argument('-o', '--output-root', required=True, help='data directory to write')
    command.add_argument('--params', help='YAML file overriding the stream parameters of the scenario')
    command.set_defaults(make_task=simulate_task)

    command = subparsers.add_parser('analyze', parents=[common], help='validation metrics')
    command.add_argument('-o', '--output-root', required=True)
    command.add_argument('-d', '--data-dir', help='data directory, for --profiles and --travel-time-profile')
    command.add_argument('--max-hops', type=int)
    command.add_argument('--trips', help='trip table (default: trips.csv in the data directory)')
    command.add_argument('--zones', help='zones YAML written by extract-fsrn')
    command.add_argument('--commercial', help='file listing commercial vehicle IDs')
    command.add_argument('--lane-count', type=int, default=1, help='lanes of the measured segments')
    command.add_argument('--fcd', help='floating-car samples, for --travel-time-profile')
    command.add_argument('--interval', type=int, help='travel time bin in seconds, for --travel-time-profile')
    mode = command.add_mutually_exclusive_group(required=True)
    mode.add_argument('--profiles', action='store_true', help='traveler concentration and classes')
    mode.add_argument('--lorenz', metavar='PROFILES', help='Lorenz curve of travelled distance')
    mode.add_argument('--fundamental-diagram', metavar='LOOP_FILE', nargs='+',
                      help='speed-density fit over loop files')
    mode.add_argument('--flow-consistency', metavar=('LOOP_FILE', 'REFERENCE_FILE'), nargs=2,
                      help='count agreement of a loop with a reference loop')
    mode.add_argument('--travel-time-profile', metavar='SEGMENT_FILE', nargs='+',
                      help='floating-car against segment probe travel time profiles')
    command.set_defaults(make_task=analyze_task)

    return parser


def holo_main(argv=None):
    """Entry point of the `holo` command; returns the exit code."""
    args = build_parser().parse_args(argv)
    apply_override_config()
    try:
        if hasattr(args, 'seed') and args.seed is None:
            args.seed = env_int('HOLO_SEED')
        jobs = args.jobs if args.jobs is not None else env_int('HOLO_JOBS', 1)
        if jobs < 1:
            raise ConfigurationError('--jobs must be at least 1')
        task = args.make_task(args)
        run_workflow(task, jobs)
    except WorkflowFailure as failure:
        for _code, message in failure.failures:
            sys.stderr.write('holo: {0}\n'.format(message))
        return failure.exit_code
    except (HoloError, EnvironmentError) as exc:
        sys.stderr.write('holo: {0}\n'.format(exc))
        return exit_code_for(exc)
    except Exception as exc:  # pylint: disable=broad-except
        log.exception('Unexpected failure')
        sys.stderr.write('holo: {0}\n'.format(exc))
        return EXIT_FAILURE

    report = getattr(args, 'report', None)
    if report is not None:
        report(task)
    return EXIT_OK


def _log_load_failure(manager, entrypoint, exception):  # pylint: disable=unused-argument
    log.error('Could not load task %s: %s', entrypoint, exception)


def main():
    """Entry point of `launch-task`: luigi's command line over every registered task."""
    logging.basicConfig(level=logging.INFO)

    # Load tasks configured using entry_points
    stevedore.ExtensionManager(EXTENSION_NAMESPACE, on_load_failure_callback=_log_load_failure)

    apply_override_config()

    # Launch Luigi using the default builder
    luigi.run()


if __name__ == '__main__':
    main()
