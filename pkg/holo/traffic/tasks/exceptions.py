"""
Errors raised by the reconstruction pipeline.

The command-line launcher maps each family onto an exit code, see
`holo.traffic.tasks.launchers.local.exit_code_for`.
"""


class HoloError(Exception):
    """Base class for every error raised deliberately by this package."""


class InputError(HoloError, ValueError):
    """An argument or input record is malformed or references something unknown."""


class TableFormatError(InputError):
    """
    A table file could not be parsed or violates its schema.

    Args:
        message (str): What went wrong.
        row (int): 1-based data row number, or None for header problems.
        column (str): The offending column, if known.
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append('row {0}'.format(row))
        if column is not None:
            location.append('column {0}'.format(column))
        if location:
            message = '{0}: {1}'.format(', '.join(location), message)
        super(TableFormatError, self).__init__(message)


class ConfigurationError(HoloError, ValueError):
    """Bad properties, parameters, or a signal plan that does not cover the data."""


class DataError(HoloError, ValueError):
    """Observations contradict themselves (FIFO violations, zero time spans)."""


class ModelInconsistencyError(HoloError, RuntimeError):
    """Observations contradict the road network model."""


class ExtractionError(ModelInconsistencyError):
    """No full-sensing subnetwork could be extracted."""


class SpillbackError(ModelInconsistencyError):
    """A queue would extend beyond the upstream end of its segment."""


class ResolutionError(ModelInconsistencyError):
    """A passing schedule was requested from an empty passing graph."""


class FitError(HoloError, ValueError):
    """Fundamental diagram samples are too degenerate to fit."""


class ScenarioError(ConfigurationError):
    """A simulator scenario cannot be run as configured."""
