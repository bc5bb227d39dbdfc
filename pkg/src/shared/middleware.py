"""
Logging middleware for frame request/response tracking
"""
import json
import logging
import time

from django.conf import settings

logger = logging.getLogger('wire_frames')

MSG_TYPE_OFFSET = 5
HEADER_SIZE = 14


class FrameLoggingMiddleware:
    """
    Wraps a frame handler (anything with handle(bytes) -> bytes) and logs
    every exchange, with a warning for slow frames
    """

    def __init__(self, handler, service_name):
        self.handler = handler
        self.service_name = service_name

    def __getattr__(self, name):
        return getattr(self.handler, name)

    def handle(self, data):
        started = time.perf_counter()
        try:
            reply = self.handler.handle(data)
        except Exception as e:
            log_data = {
                'service': self.service_name,
                'request': self._describe(data),
                'exception_type': type(e).__name__,
                'exception_message': str(e),
            }
            logger.error(f"Unhandled Exception: {json.dumps(log_data)}", exc_info=True)
            raise

        duration = time.perf_counter() - started
        log_data = {
            'service': self.service_name,
            'request': self._describe(data),
            'response': self._describe(reply),
            'duration_ms': round(duration * 1000, 2),
        }
        if self._describe(reply).get('msg_type') == 7:
            logger.warning(f"Frame: {json.dumps(log_data)}")
        else:
            logger.info(f"Frame: {json.dumps(log_data)}")

        if duration > settings.SPLITLEAK_SLOW_FRAME_SECONDS:
            logging.getLogger(__name__).warning(
                f"Slow Frame: {self.service_name} took {duration:.2f}s | "
                f"msg_type {log_data['request'].get('msg_type')}"
            )
        return reply

    def _describe(self, data):
        if not data or len(data) < HEADER_SIZE:
            return {'bytes': len(data or b'')}
        return {'msg_type': data[MSG_TYPE_OFFSET], 'bytes': len(data)}
