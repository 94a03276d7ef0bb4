import os

from celery import Celery

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'okfeb.settings')

app = Celery('okfeb')

# All celery-related settings carry a `CELERY_` prefix in okfeb.settings.
app.config_from_object('django.conf:settings', namespace='CELERY')

# runs.tasks
app.autodiscover_tasks()
