"""
Surrogate builder app configuration
"""
from django.apps import AppConfig


class SurrogateServiceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'src.services.surrogate_service'
    verbose_name = 'Surrogate Builder'

    def ready(self):
        """Register the surrogate checkpoint loader"""
        from src.services.model_zoo_service.checkpoints import register_checkpoint_kind

        from .models import restore_surrogate

        register_checkpoint_kind('surrogate', restore_surrogate)
