"""
In-process deployment: client -> edge -> (tap) -> cloud over the same frame bytes
"""
import logging

from src.shared.middleware import FrameLoggingMiddleware

from .links import InProcessLink, TappedLink
from .serializers import SessionConfig
from .services import CloudService, EdgeService, Sniffer, SplitClient

logger = logging.getLogger(__name__)


class SimulatedDeployment:
    """
    Every session gets its own edge and cloud handler; the split model is
    shared read-only and a single sniffer (if any) watches all sessions.
    """

    def __init__(self, split_model, output_mode='score', tap=False, sniffer=None, log_frames=False):
        self.split = split_model
        self.config = SessionConfig.for_split(split_model, output_mode)
        self.sniffer = sniffer if sniffer is not None else (Sniffer() if tap else None)
        self.log_frames = log_frames
        self.next_session = 1

    def _wrap(self, handler):
        if self.log_frames:
            return FrameLoggingMiddleware(handler, handler.service_name)
        return handler

    def open_session(self):
        cloud_link = InProcessLink(self._wrap(CloudService(self.split, self.config)))
        if self.sniffer is not None:
            cloud_link = TappedLink(cloud_link, self.sniffer)
        edge = self._wrap(EdgeService(self.split, cloud_link))
        client = SplitClient(InProcessLink(edge), self.split.input_shape, session_id=self.next_session)
        self.next_session += 1
        client.connect()
        logger.debug(f"Opened simulated session {client.session_id} in {client.mode} mode")
        return client
