"""
Experiment harness app configuration
"""
from django.apps import AppConfig


class ExperimentsServiceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'src.services.experiments_service'
    verbose_name = 'Experiment Harness'
