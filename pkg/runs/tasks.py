# runs/tasks.py
from celery import shared_task

from .tasks_utils import execute_recorded_run


@shared_task
def execute_run_task(run_id: int):
    """Worker-side execution of a recorded run; output goes to run.output_path."""
    return execute_recorded_run(run_id)
