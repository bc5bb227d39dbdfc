"""
Request/response transports between endpoints
"""
import logging
import socket

from django.conf import settings

from src.shared.exceptions import ProtocolError, SplitLeakError, Timeout
from src.shared.utils import parse_endpoint

from .codec import HEADER_SIZE, parse_header

logger = logging.getLogger(__name__)


class InProcessLink:
    """Hands frame bytes straight to a handler"""

    def __init__(self, handler):
        self.handler = handler

    def handle(self, data):
        return self.handler.handle(bytes(data))

    def close(self):
        if hasattr(self.handler, 'close'):
            self.handler.close()


class TappedLink:
    """
    Forwards every request unchanged, then lets the sniffer look at the
    bytes. Sniffer errors are logged; they never reach either endpoint.
    """

    def __init__(self, downstream, sniffer):
        self.downstream = downstream
        self.sniffer = sniffer

    def handle(self, data):
        reply = self.downstream.handle(data)
        try:
            self.sniffer.observe(data)
        except SplitLeakError as e:
            logger.warning(f"Tap skipped a frame: {e.error_code} ({e.message})")
        return reply

    def close(self):
        if hasattr(self.downstream, 'close'):
            self.downstream.close()


class SocketLink:
    """Blocking TCP link with one request in flight"""

    def __init__(self, endpoint, timeout=None):
        self.endpoint = endpoint
        self.timeout = timeout if timeout is not None else settings.SPLITLEAK_SOCKET_TIMEOUT
        self.sock = None

    def _connect(self):
        host, port = parse_endpoint(self.endpoint)
        try:
            self.sock = socket.create_connection((host, port), timeout=self.timeout)
        except socket.timeout:
            raise Timeout(f"Connecting to {self.endpoint} timed out after {self.timeout}s")
        except OSError as e:
            raise ProtocolError(f"Cannot connect to {self.endpoint}: {e}")
        return self.sock

    def _recv_exactly(self, count):
        chunks, remaining = [], count
        while remaining:
            chunk = self.sock.recv(remaining)
            if not chunk:
                raise ProtocolError(f"{self.endpoint} closed the connection mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b''.join(chunks)

    def handle(self, data):
        sock = self.sock or self._connect()
        try:
            sock.sendall(data)
            header = self._recv_exactly(HEADER_SIZE)
            try:
                _, _, payload_len = parse_header(header)
            except SplitLeakError as e:
                raise ProtocolError(f"Malformed reply header from {self.endpoint}: {e.message}")
            return header + self._recv_exactly(payload_len)
        except socket.timeout:
            self.close()
            raise Timeout(f"No reply from {self.endpoint} within {self.timeout}s")
        except OSError as e:
            self.close()
            raise ProtocolError(f"Connection to {self.endpoint} failed: {e}")
        except ProtocolError:
            self.close()
            raise

    def close(self):
        if self.sock is not None:
            try:
                self.sock.close()
            finally:
                self.sock = None
