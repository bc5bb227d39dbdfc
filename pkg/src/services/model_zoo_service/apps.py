"""
Model zoo app configuration
"""
from django.apps import AppConfig


class ModelZooServiceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'src.services.model_zoo_service'
    verbose_name = 'Model Zoo'

    def ready(self):
        """Register the classifier checkpoint loader"""
        from .checkpoints import register_checkpoint_kind
        from .models import restore_classifier

        register_checkpoint_kind('classifier', restore_classifier)
