"""
Attack suite app configuration
"""
from django.apps import AppConfig


class AttackServiceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'src.services.attack_service'
    verbose_name = 'Attack Suite'
