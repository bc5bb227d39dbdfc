"""
Wire service app configuration
"""
from django.apps import AppConfig


class WireServiceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'src.services.wire_service'
    verbose_name = 'Split Wire'
