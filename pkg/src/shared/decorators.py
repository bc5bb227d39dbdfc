"""
Shared decorators for the platform
"""
import logging
import time
from functools import wraps

from django.core.management.base import CommandError

from .exceptions import SplitLeakError
from .utils import format_duration


def log_action(action_type):
    """
    Decorator to log start, duration and failure of a pipeline stage
    """
    def decorator(func):
        stage_logger = logging.getLogger(func.__module__)

        @wraps(func)
        def wrapper(*args, **kwargs):
            started = time.perf_counter()
            stage_logger.info(f"{action_type}: started")
            try:
                result = func(*args, **kwargs)
            except SplitLeakError as e:
                stage_logger.error(f"{action_type}: failed with {e.error_code} ({e.message})")
                raise
            stage_logger.info(f"{action_type}: finished in {format_duration(time.perf_counter() - started)}")
            return result

        return wrapper
    return decorator


def command_errors(handle):
    """
    Decorator for management commands: surface domain errors as CommandError
    """
    @wraps(handle)
    def wrapper(self, *args, **options):
        try:
            return handle(self, *args, **options)
        except SplitLeakError as e:
            raise CommandError(f"{e.error_code}: {e.message}") from e

    return wrapper
