"""
Machine-parsable progress lines: ``PROG <stage> <pct>% (<done>/<total>)``.

Lines go to the ``flowdistill.progress`` logger, which the CLI wires to stderr
without a timestamp prefix.
"""

import logging

from src.config import settings

progress_logger = logging.getLogger("flowdistill.progress")


class ProgressReporter:
    """Emits one line each time completion crosses a ``step_percent`` boundary."""

    def __init__(self, stage: str, total: int, step_percent: int = settings.PROGRESS_STEP_PERCENT):
        self.stage = stage
        self.total = max(int(total), 0)
        self.step_percent = step_percent
        self._last_step = -1

    def __call__(self, done: int, total: int = None) -> None:
        self.update(done, total)

    def update(self, done: int, total: int = None) -> None:
        if total is not None:
            self.total = total
        if self.total <= 0:
            return
        percent = min(100, int(100 * done / self.total))
        step = percent // self.step_percent
        if step > self._last_step:
            self._last_step = step
            progress_logger.info("PROG %s %d%% (%d/%d)", self.stage, percent, done, self.total)
