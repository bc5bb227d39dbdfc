"""
Tensor engine app configuration
"""
import logging

from django.apps import AppConfig
from django.conf import settings

logger = logging.getLogger(__name__)


class AutogradServiceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'src.services.autograd_service'
    verbose_name = 'Tensor Engine'

    def ready(self):
        """Pin torch threading so forward passes are reproducible"""
        import torch

        torch.set_num_threads(settings.SPLITLEAK_TORCH_THREADS)
        logger.debug(f"torch intra-op threads pinned to {settings.SPLITLEAK_TORCH_THREADS}")
