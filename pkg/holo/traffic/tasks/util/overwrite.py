"""
Forced reruns of stages whose outputs already exist.
"""
import logging

import luigi

log = logging.getLogger(__name__)


class OverwriteOutputMixin(object):
    """
    Adds `--overwrite` to a stage.

    Trips, trajectories and measurements are deterministic for a fixed seed,
    so luigi skips a stage once its outputs exist.  With `overwrite` set the
    stage reports itself incomplete until `run()` has called
    `remove_output_on_overwrite()`; building the task graph never deletes
    anything.

    List the mixin before `luigi.Task` so its `complete()` wins.
    """
    overwrite = luigi.BoolParameter(default=False)
    attempted_removal = False

    def complete(self):
        if self.overwrite and not self.attempted_removal:
            return False
        return super(OverwriteOutputMixin, self).complete()

    def remove_output_on_overwrite(self):
        """Delete the stage's existing outputs when overwriting; call first thing in `run()`."""
        if not self.overwrite:
            return
        self.attempted_removal = True
        stale = [target for target in luigi.task.flatten(self.output()) if target.exists()]
        for target in stale:
            target.remove()
        if stale:
            log.info('Removed %d existing output(s) of %s', len(stale), self)
