"""
Edge, cloud, client and sniffer endpoints of the split deployment.

Every endpoint speaks whole frames: ``handle(bytes) -> bytes`` answers one
request frame with one reply frame. Transports (in-process, sockets, taps)
live in links.py and servers.py.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch

from src.services.model_zoo_service.split import flatten_features, reshape_features
from src.shared.exception_handler import decode_error_document, encode_error_document
from src.shared.exceptions import (
    InconsistentDim, PayloadLengthMismatch, ProtocolError, ShapeMismatch, SplitLeakError,
)

from .capture import write_capture
from .codec import (
    MODE_CODES, MODES_BY_CODE, Frame, FrameStream, MessageType, decode_floats, decode_frame,
    decode_label, decode_shape, encode_floats, encode_frame, encode_label, encode_shape,
)

logger = logging.getLogger(__name__)


def _volume(shape):
    size = 1
    for v in shape:
        size *= v
    return size


class FrameHandler:
    """Base for services: decode, dispatch, and turn domain errors into error frames"""
    service_name = 'frames'

    def __init__(self):
        self.session_id = None

    def handle(self, data):
        try:
            frame = decode_frame(data)
        except SplitLeakError as e:
            return self.error_reply(e, 0)
        try:
            return self.dispatch(frame)
        except SplitLeakError as e:
            return self.error_reply(e, frame.session_id)

    def dispatch(self, frame):
        raise NotImplementedError

    def error_reply(self, exc, session_id):
        context = {'service': self.service_name, 'session_id': session_id}
        return encode_frame(Frame(MessageType.ERROR, session_id, encode_error_document(exc, context)))

    def require_session(self, frame):
        if self.session_id is None:
            raise ProtocolError(f"{frame.msg_type.name} received before session_hello")

    def close(self):
        pass


class EdgeService(FrameHandler):
    """
    Runs the edge slice per sample and forwards one feature frame upstream.
    Acts as the client's gateway: the upstream reply is relayed unchanged.
    """
    service_name = 'edge'

    def __init__(self, split_model, upstream):
        super().__init__()
        self.split = split_model
        self.upstream = upstream

    def dispatch(self, frame):
        if frame.msg_type == MessageType.SESSION_HELLO:
            shape = decode_shape(frame.payload)
            if shape != tuple(self.split.input_shape):
                raise ShapeMismatch(
                    f"Session input shape {shape} does not match the edge model {self.split.input_shape}"
                )
            self.session_id = frame.session_id
            logger.info(f"Edge session {frame.session_id} opened for input {shape}")
            return self.upstream.handle(encode_frame(frame))

        if frame.msg_type == MessageType.INPUT:
            self.require_session(frame)
            expected = 4 * _volume(self.split.input_shape)
            if frame.payload_len != expected:
                raise PayloadLengthMismatch(
                    f"Input payload has {frame.payload_len} bytes, expected {expected}",
                    {'expected': expected, 'got': frame.payload_len},
                )
            feature = self.compute_feature(decode_floats(frame.payload))
            return self.upstream.handle(encode_frame(Frame(MessageType.FEATURE, frame.session_id, feature)))

        raise ProtocolError(f"Edge does not accept {frame.msg_type.name} frames")

    def compute_feature(self, values):
        """Flattened binary32 bytes of f_e(x); no shape fields"""
        x = torch.from_numpy(values.copy()).reshape(1, *self.split.input_shape).to(self.split.dtype)
        with torch.no_grad():
            feat = self.split.edge(x)
        return encode_floats(flatten_features(feat).cpu().numpy())

    def close(self):
        if hasattr(self.upstream, 'close'):
            self.upstream.close()


class CloudService(FrameHandler):
    """Reshapes features with the known shape, runs the cloud slice and answers per output mode"""
    service_name = 'cloud'

    def __init__(self, split_model, config):
        super().__init__()
        self.split = split_model
        self.config = config

    def dispatch(self, frame):
        if frame.msg_type == MessageType.SESSION_HELLO:
            shape = decode_shape(frame.payload)
            if shape != tuple(self.config.input_shape):
                raise ShapeMismatch(f"Session input shape {shape} does not match {self.config.input_shape}")
            self.session_id = frame.session_id
            mode_code = bytes([MODE_CODES[self.config.output_mode]])
            return encode_frame(Frame(MessageType.ACK, frame.session_id, mode_code))

        if frame.msg_type == MessageType.FEATURE:
            self.require_session(frame)
            if frame.payload_len != self.config.feature_payload_bytes:
                raise PayloadLengthMismatch(
                    f"Feature payload has {frame.payload_len} bytes, expected {self.config.feature_payload_bytes}",
                    {'expected': self.config.feature_payload_bytes, 'got': frame.payload_len},
                )
            probs = self.predict(decode_floats(frame.payload))
            return self.reply(frame.session_id, probs)

        raise ProtocolError(f"Cloud does not accept {frame.msg_type.name} frames")

    def predict(self, values):
        feat = reshape_features(torch.from_numpy(values.copy()), self.config.feature_shape).to(self.split.dtype)
        with torch.no_grad():
            logits = self.split.cloud(feat)
        return torch.softmax(logits, dim=1)[0].cpu().numpy().astype(np.float32)

    def reply(self, session_id, probs):
        mode = self.config.output_mode
        if mode == 'score':
            return encode_frame(Frame(MessageType.OUTPUT_SCORE, session_id, encode_floats(probs)))
        if mode == 'hard':
            return encode_frame(Frame(MessageType.OUTPUT_HARD, session_id, encode_label(int(np.argmax(probs)))))
        return encode_frame(Frame(MessageType.ACK, session_id, b''))


class Sniffer:
    """
    Read-only observer of the edge-to-cloud byte stream. Keeps the payload of
    every feature frame as one capture row; the row width is fixed by the
    first feature frame.
    """

    def __init__(self, limit=None):
        self.stream = FrameStream()
        self.rows = []
        self.dim = None
        self.limit = limit
        self.frames_seen = 0

    @property
    def count(self):
        return len(self.rows)

    @property
    def full(self):
        return self.limit is not None and self.count >= self.limit

    def observe(self, data):
        failure = None
        for frame in self.stream.feed(data):
            self.frames_seen += 1
            if frame.msg_type != MessageType.FEATURE or self.full:
                continue
            if frame.payload_len % 4 or (self.dim is not None and frame.payload_len != 4 * self.dim):
                failure = failure or InconsistentDim(
                    f"Feature frame with {frame.payload_len} bytes, capture width is {self.dim}",
                    {'expected_dim': self.dim, 'payload_len': frame.payload_len},
                )
                continue
            if self.dim is None:
                self.dim = frame.payload_len // 4
                logger.info(f"Sniffer locked capture width d={self.dim}")
            self.rows.append(decode_floats(frame.payload).copy())
        if failure:
            raise failure

    def capture(self):
        if not self.rows:
            return np.zeros((0, self.dim or 0), dtype=np.float32)
        return np.stack(self.rows)

    def save(self, path):
        write_capture(path, self.capture())
        logger.info(f"Sniffer saved {self.count} rows of width {self.dim} to {path}")

    def reset(self):
        self.stream = FrameStream()
        self.rows = []
        self.dim = None
        self.frames_seen = 0


@dataclass
class Observation:
    """What the client sees for one query"""
    mode: str
    probs: np.ndarray = None
    label: int = None


class SplitClient:
    """Sends inputs through the edge gateway; counts every inference as one query"""

    def __init__(self, link, input_shape, session_id=1):
        self.link = link
        self.input_shape = tuple(input_shape)
        self.session_id = session_id
        self.query_count = 0
        self.mode = None

    def connect(self):
        reply = self._exchange(Frame(MessageType.SESSION_HELLO, self.session_id, encode_shape(self.input_shape)))
        if reply.msg_type != MessageType.ACK or len(reply.payload) != 1 or reply.payload[0] not in MODES_BY_CODE:
            raise ProtocolError(f"Unexpected session reply {reply.msg_type.name}")
        self.mode = MODES_BY_CODE[reply.payload[0]]
        return self.mode

    def infer(self, image):
        if self.mode is None:
            self.connect()
        image = torch.as_tensor(image).detach()
        if image.dim() == 4 and image.shape[0] == 1:
            image = image[0]
        if tuple(image.shape) != self.input_shape:
            raise ShapeMismatch(f"Image shape {tuple(image.shape)} does not match session {self.input_shape}")
        self.query_count += 1
        payload = encode_floats(image.cpu().numpy())
        reply = self._exchange(Frame(MessageType.INPUT, self.session_id, payload))
        if reply.msg_type == MessageType.OUTPUT_SCORE:
            return Observation('score', probs=decode_floats(reply.payload).copy())
        if reply.msg_type == MessageType.OUTPUT_HARD:
            return Observation('hard', label=decode_label(reply.payload))
        if reply.msg_type == MessageType.ACK:
            return Observation('none')
        raise ProtocolError(f"Unexpected inference reply {reply.msg_type.name}")

    def _exchange(self, frame):
        data = self.link.handle(encode_frame(frame))
        try:
            reply = decode_frame(data)
        except SplitLeakError as e:
            raise ProtocolError(f"Malformed reply: {e.message}", {'remote_error_code': e.error_code})
        if reply.msg_type == MessageType.ERROR:
            document = decode_error_document(reply.payload)
            raise ProtocolError(
                document.get('message', 'Remote error'),
                {'remote_error_code': document.get('error_code'), 'details': document.get('details', {})},
            )
        return reply

    def close(self):
        if hasattr(self.link, 'close'):
            self.link.close()
