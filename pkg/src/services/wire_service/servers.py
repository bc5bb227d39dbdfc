"""
asyncio socket servers for the edge, the cloud and the forwarding tap
"""
import asyncio
import logging
import threading

from src.shared.exceptions import SplitLeakError
from src.shared.middleware import FrameLoggingMiddleware
from src.shared.utils import parse_endpoint

from .codec import HEADER_SIZE, parse_header

logger = logging.getLogger(__name__)


class AsyncService:
    """Listener lifecycle shared by frame servers and the tap"""
    name = 'service'

    def __init__(self, listen):
        self.host, self.port = parse_endpoint(listen)
        self.server = None
        self.loop = None
        self._stop = None
        self.connections = set()

    @property
    def endpoint(self):
        return f"{self.host}:{self.port}"

    async def on_connect(self, reader, writer):
        raise NotImplementedError

    async def _track(self, reader, writer):
        self.connections.add(writer)
        try:
            await self.on_connect(reader, writer)
        finally:
            self.connections.discard(writer)

    async def run(self, ready=None):
        self.loop = asyncio.get_running_loop()
        self._stop = asyncio.Event()
        self.server = await asyncio.start_server(self._track, self.host, self.port)
        self.port = self.server.sockets[0].getsockname()[1]
        logger.info(f"{self.name} listening on {self.endpoint}")
        if ready is not None:
            ready.set()
        await self._stop.wait()
        self.server.close()
        for writer in list(self.connections):
            writer.close()
        await self.server.wait_closed()
        logger.info(f"{self.name} on {self.endpoint} stopped")

    def stop(self):
        """Thread-safe shutdown request"""
        if self.loop is not None and self._stop is not None:
            self.loop.call_soon_threadsafe(self._stop.set)


class FrameServer(AsyncService):
    """
    One handler per connection, requests answered strictly in order. Model
    work runs in a worker thread so the loop keeps accepting sessions.
    """

    def __init__(self, handler_factory, listen, name):
        super().__init__(listen)
        self.handler_factory = handler_factory
        self.name = name

    async def on_connect(self, reader, writer):
        peer = writer.get_extra_info('peername')
        handler = FrameLoggingMiddleware(self.handler_factory(), self.name)
        logger.info(f"{self.name}: session from {peer}")
        try:
            while True:
                try:
                    header = await reader.readexactly(HEADER_SIZE)
                    _, _, payload_len = parse_header(header)
                    data = header + await reader.readexactly(payload_len)
                except asyncio.IncompleteReadError:
                    break
                except SplitLeakError as e:
                    # Unusable header: answer once, then drop the session
                    writer.write(handler.error_reply(e, 0))
                    await writer.drain()
                    break
                reply = await asyncio.to_thread(handler.handle, data)
                writer.write(reply)
                await writer.drain()
        except ConnectionError as e:
            logger.warning(f"{self.name}: connection from {peer} lost: {e}")
        finally:
            await asyncio.to_thread(handler.close)
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass
            logger.info(f"{self.name}: session from {peer} closed")


class TapRelay(AsyncService):
    """
    Transparent TCP relay in front of the cloud. Client bytes are forwarded
    first and copied to the sniffer afterwards; replies pass through untouched.
    """
    name = 'tap'

    def __init__(self, sniffer, listen, upstream):
        super().__init__(listen)
        self.sniffer = sniffer
        self.upstream = upstream

    async def on_connect(self, reader, writer):
        host, port = parse_endpoint(self.upstream)
        try:
            up_reader, up_writer = await asyncio.open_connection(host, port)
        except OSError as e:
            logger.error(f"tap: cannot reach upstream {self.upstream}: {e}")
            writer.close()
            return
        await asyncio.gather(
            self._pump(reader, up_writer, observe=True),
            self._pump(up_reader, writer, observe=False),
        )

    async def _pump(self, source, sink, observe):
        try:
            while True:
                chunk = await source.read(1 << 16)
                if not chunk:
                    break
                sink.write(chunk)
                await sink.drain()
                if observe:
                    self._observe(chunk)
        except ConnectionError as e:
            logger.warning(f"tap: stream ended: {e}")
        finally:
            sink.close()

    def _observe(self, chunk):
        try:
            self.sniffer.observe(chunk)
        except SplitLeakError as e:
            logger.warning(f"tap: skipped frame: {e.error_code} ({e.message})")
        if self.sniffer.full:
            logger.info(f"tap: capture limit of {self.sniffer.limit} rows reached")
            self.stop()


class ServiceThread(threading.Thread):
    """Runs an AsyncService on a private event loop in a daemon thread"""

    def __init__(self, service):
        super().__init__(daemon=True, name=f'{service.name}-loop')
        self.service = service
        self.ready = threading.Event()

    def run(self):
        asyncio.run(self.service.run(self.ready))

    def start(self):
        super().start()
        if not self.ready.wait(timeout=10):
            raise RuntimeError(f"{self.service.name} did not start listening")
        return self

    def stop(self):
        self.service.stop()
        self.join(timeout=10)
