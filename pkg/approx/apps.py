from django.apps import AppConfig


class ApproxConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'approx'
