"""
Shape estimator app configuration
"""
from django.apps import AppConfig


class ShapeServiceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'src.services.shape_service'
    verbose_name = 'Shape Estimator'
