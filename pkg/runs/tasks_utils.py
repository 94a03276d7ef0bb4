"""
Recorded run execution, either through Celery or inline depending on
settings.OKFEB_USE_ASYNC.
"""

import logging
import sys
from typing import IO, Optional

from django.conf import settings
from django.utils import timezone

from commons.exceptions import ConfigError

from .logic import RunConfig, execute
from .models import Run

logger = logging.getLogger(__name__)


def enqueue_run(run_id: int, out: Optional[IO[str]] = None, err: Optional[IO[str]] = None):
    """
    Async: returns the Celery AsyncResult (the run must have an output_path).
    Sync: executes now and returns the RunOutputs; ``out`` is used when the
    run has no output_path.
    """
    if settings.OKFEB_USE_ASYNC:
        from .tasks import execute_run_task
        run = Run.objects.get(id=run_id)
        if not run.output_path:
            raise ConfigError("async runs need an output path")
        return execute_run_task.delay(run_id)
    return execute_recorded_run(run_id, out=out, err=err)


def execute_recorded_run(run_id: int, out: Optional[IO[str]] = None, err: Optional[IO[str]] = None):
    run = Run.objects.get(id=run_id)

    # Guard: a finished run is never executed twice
    if run.state == "SUCCESS":
        logger.info("run %s already processed", run_id)
        return None

    run.state = "STARTED"
    run.save(update_fields=["state"])
    logger.info("run %s started (%s)", run_id, run.command)

    try:
        cfg = RunConfig.from_dict(run.config)
        if run.output_path:
            with open(run.output_path, "w", encoding="utf-8") as fh:
                outs = execute(cfg, fh, err)
        else:
            outs = execute(cfg, out or sys.stdout, err)

        run.summary = outs.summary
        run.state = "SUCCESS"
        run.finished_at = timezone.now()
        run.save(update_fields=["summary", "state", "finished_at"])
        logger.info("run %s finished", run_id)
        return outs

    except Exception as e:
        run.state = "FAILURE"
        run.error = str(e)
        run.finished_at = timezone.now()
        run.save(update_fields=["state", "error", "finished_at"])
        raise
